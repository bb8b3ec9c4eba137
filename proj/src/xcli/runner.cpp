#include "icl/xcli/runner.hpp"

#include <openssl/sha.h>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "icl/errors.hpp"

#ifndef ICL_CODE_VERSION
#define ICL_CODE_VERSION "unknown"
#endif

namespace icl::xcli {

namespace fs = std::filesystem;

std::string git_blob_sha1(const std::string& content) {
  const std::string header = "blob " + std::to_string(content.size()) + '\0';
  SHA_CTX ctx;
  SHA1_Init(&ctx);
  SHA1_Update(&ctx, header.data(), header.size());
  SHA1_Update(&ctx, content.data(), content.size());
  unsigned char digest[SHA_DIGEST_LENGTH];
  SHA1_Final(digest, &ctx);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned char c : digest) {
    out += hex[c >> 4];
    out += hex[c & 15];
  }
  return out;
}

fs::path default_output_root() {
  const char* env = std::getenv("ICL_OUTPUT_ROOT");
  return env && *env ? fs::path(env) : fs::path("runs");
}

std::string code_version() { return ICL_CODE_VERSION; }

void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
#endif
}

namespace {

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_file(const fs::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary);
  out << content;
  if (!out) throw std::runtime_error("cannot write " + p.string());
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

struct Job {
  std::size_t block;
  std::size_t learner;
  std::size_t tasks;
  std::vector<std::size_t> ns;
  std::optional<std::uint64_t> seed;  // empty for estimators
};

struct Slot {
  bool done = false;
  train::EvalReport report;
  std::string error;
};

}  // namespace

RunResult run_experiment(const ExperimentConfig& config, const RunOptions& opts) {
  RunResult result;
  result.dir = opts.out_dir;
  fs::create_directories(result.dir);
  if (config.checkpoints) fs::create_directories(result.dir / "checkpoints");
  auto log = [&](const std::string& s) {
    if (opts.log) opts.log(s);
  };

  const std::string config_text = to_json(config).dump(2) + "\n";
  write_file(result.dir / "config.json", config_text);
  nlohmann::json manifest{{"name", config.name},
                          {"seeds", config.seeds},
                          {"start_time", utc_now()},
                          {"config_sha1", git_blob_sha1(config_text)},
                          {"code_version", code_version()},
                          {"partial", true},
                          {"status", "running"}};
  write_file(result.dir / "manifest.json", manifest.dump(2) + "\n");

  std::vector<Job> jobs;
  for (std::size_t bi = 0; bi < config.blocks.size(); ++bi) {
    for (const auto& cell : plan_cells(config.blocks[bi], bi)) {
      if (config.blocks[bi].learners[cell.learner].estimator) {
        jobs.push_back(Job{bi, cell.learner, cell.tasks, cell.ns, std::nullopt});
      } else {
        for (std::uint64_t s : config.seeds) jobs.push_back(Job{bi, cell.learner, cell.tasks, cell.ns, s});
      }
    }
  }

  // One shared predictor per estimator so per-N tuning happens once.
  std::vector<std::vector<train::Predictor>> estimators(config.blocks.size());
  for (std::size_t bi = 0; bi < config.blocks.size(); ++bi) {
    const auto& b = config.blocks[bi];
    for (const auto& l : b.learners) {
      estimators[bi].push_back(l.estimator ? make_estimator(*l.estimator, b.family, b.eval_seed) : train::Predictor{});
    }
  }

  auto run_job = [&](const Job& job) {
    const auto& b = config.blocks[job.block];
    const auto& l = b.learners[job.learner];
    train::EvalOptions eval;
    eval.num_eval_tasks = b.eval_tasks;
    eval.seed = b.eval_seed;
    if (b.noise_filter) {
      const double sigma = *b.noise_filter;
      eval.task_filter = [sigma](const tasks::TaskParams& t) { return t.noise_sigma == sigma; };
    }
    train::EvalReport report;
    if (!job.seed) {
      const auto rows = train::evaluate(estimators[job.block][job.learner], l.id, b.family, job.ns, eval, job.tasks);
      for (std::uint64_t s : config.seeds)
        for (auto r : rows.rows) {
          r.seed = s;
          report.rows.push_back(r);
        }
    } else {
      const auto t0 = std::chrono::steady_clock::now();
      train::TrainConfig cfg = l.train;
      cfg.num_tasks = job.tasks;
      cfg.master_seed = *job.seed;
      auto model = models::make_model(*l.model, *job.seed);
      const auto tr = train::train(*model, b.family, cfg);
      if (config.checkpoints) {
        const auto name = b.label + "__" + l.id + "__T" + std::to_string(job.tasks) + "__seed" +
                          std::to_string(*job.seed) + ".ckpt";
        std::ofstream out(result.dir / "checkpoints" / name, std::ios::binary);
        models::save_checkpoint(out, *model,
                                {{"block", b.label},
                                 {"learner", l.id},
                                 {"T", job.tasks},
                                 {"seed", *job.seed},
                                 {"train", train::to_json(cfg)},
                                 {"initial_loss", tr.initial_loss},
                                 {"final_loss", tr.final_loss}});
      }
      report = train::evaluate(train::predictor_of(*model), l.id, b.family, job.ns, eval, job.tasks);
      for (auto& r : report.rows) r.seed = *job.seed;
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::ostringstream msg;
      msg << b.label << "/" << l.id << " T=" << job.tasks << " seed=" << *job.seed << " loss "
          << train::format_double(tr.initial_loss) << " -> " << train::format_double(tr.final_loss) << " ("
          << static_cast<long>(secs) << " s)";
      log(msg.str());
    }
    for (auto& r : report.rows) r.family = b.label;
    return report;
  };

  std::vector<Slot> slots(jobs.size());
  std::mutex mu;
  std::condition_variable cv;
  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};
  const std::size_t nthreads = std::max<std::size_t>(1, std::min(opts.threads.value_or(config.threads), jobs.size()));
  auto worker = [&] {
    for (;;) {
      const std::size_t k = next.fetch_add(1);
      if (k >= jobs.size() || stop.load()) return;
      Slot s;
      try {
        s.report = run_job(jobs[k]);
      } catch (const std::exception& e) {
        s.error = e.what();
        stop.store(true);
      }
      s.done = true;
      std::lock_guard lock(mu);
      slots[k] = std::move(s);
      cv.notify_all();
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t i = 0; i < nthreads; ++i) pool.emplace_back(worker);

  // Single writer: rows go out in job order regardless of completion order.
  std::ofstream csv(result.dir / "results.csv", std::ios::binary);
  csv << train::EvalReport::csv_header() << '\n';
  std::size_t completed = 0;
  for (std::size_t k = 0; k < jobs.size(); ++k) {
    std::unique_lock lock(mu);
    // Jobs skipped after a failure all come after the failing one, so this
    // never waits on a slot nobody will fill.
    cv.wait(lock, [&] { return slots[k].done; });
    Slot s = std::move(slots[k]);
    lock.unlock();
    if (!s.error.empty()) {
      result.partial = true;
      result.error = s.error;
      log("error: " + s.error);
      break;
    }
    s.report.write_csv(csv, false);
    csv.flush();
    result.report.append(s.report);
    ++completed;
  }
  stop.store(true);
  for (auto& t : pool) t.join();
  csv.close();
  if (completed < jobs.size()) result.partial = true;

  manifest["end_time"] = utc_now();
  manifest["partial"] = result.partial;
  manifest["status"] = result.partial ? "failed" : "complete";
  if (!result.error.empty()) manifest["error"] = result.error;
  manifest["cells_total"] = jobs.size();
  manifest["cells_completed"] = completed;
  manifest["rows"] = result.report.rows.size();
  manifest["results_sha1"] = git_blob_sha1(read_file(result.dir / "results.csv"));
  write_file(result.dir / "manifest.json", manifest.dump(2) + "\n");
  return result;
}

}  // namespace icl::xcli
