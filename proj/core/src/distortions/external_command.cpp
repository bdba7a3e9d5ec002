#include <fcntl.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include <torch/torch.h>

#include "end2/core/errors.hpp"
#include "end2/core/image_io.hpp"
#include "end2/distortions/distortions.hpp"

namespace end2::distortions {

namespace {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    std::string pattern = (fs::temp_directory_path() / "end2-ext-XXXXXX").string();
    if (::mkdtemp(pattern.data()) == nullptr) throw DistortionFailedError("external", "cannot create temp directory");
    path_ = pattern;
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

std::string substitute(std::string arg, const std::string& input, const std::string& output) {
  for (const auto& [key, value] : {std::pair{std::string("{input}"), input}, std::pair{std::string("{output}"), output}}) {
    for (auto pos = arg.find(key); pos != std::string::npos; pos = arg.find(key, pos + value.size())) {
      arg.replace(pos, key.size(), value);
    }
  }
  return arg;
}

struct Job {
  pid_t pid = -1;
  fs::path input;
  fs::path output;
  fs::path log;
  std::chrono::steady_clock::time_point started;
  int status = 0;
  bool done = false;
  bool timed_out = false;
};

pid_t spawn(const ExternalCommandSpec& spec, const Job& job) {
  std::vector<std::string> args;
  args.push_back(spec.executable);
  for (const auto& a : spec.args) args.push_back(substitute(a, job.input.string(), job.output.string()));
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  argv.push_back(nullptr);

  const pid_t pid = ::fork();
  if (pid < 0) throw DistortionFailedError("external", "fork failed");
  if (pid == 0) {
    const int fd = ::open(job.log.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    if (fd >= 0) {
      ::dup2(fd, STDOUT_FILENO);
      ::dup2(fd, STDERR_FILENO);
      ::close(fd);
    }
    ::execvp(argv[0], argv.data());
    std::_Exit(127);
  }
  return pid;
}

std::string tail_of(const fs::path& log) {
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  std::string text = ss.str();
  if (text.size() > 400) text = "..." + text.substr(text.size() - 400);
  return text;
}

}  // namespace

ImageBatch external_command(const ImageBatch& marked, const ExternalCommandSpec& spec) {
  torch::NoGradGuard no_grad;
  const auto& x = marked.data;
  if (!x.defined() || x.dim() != 4 || x.size(1) != 3) throw ShapeError("external: expected (b,3,h,w)");
  TempDir dir;
  const auto n = x.size(0);
  std::vector<Job> jobs(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    auto& job = jobs[static_cast<std::size_t>(i)];
    const auto stem = "img" + std::to_string(i);
    job.input = dir.path() / (stem + "_in.png");
    job.output = dir.path() / (stem + "_out.png");
    job.log = dir.path() / (stem + ".log");
    save_image(x[i], job.input);
  }

  const auto timeout = std::chrono::duration<double>(spec.timeout_seconds);
  std::size_t next = 0;
  std::size_t running = 0;
  std::size_t finished = 0;
  auto kill_all = [&] {
    for (auto& j : jobs) {
      if (j.pid > 0 && !j.done) {
        ::kill(j.pid, SIGKILL);
        ::waitpid(j.pid, nullptr, 0);
        j.done = true;
      }
    }
  };
  while (finished < jobs.size()) {
    while (running < static_cast<std::size_t>(spec.max_parallel) && next < jobs.size()) {
      auto& job = jobs[next++];
      job.pid = spawn(spec, job);
      job.started = std::chrono::steady_clock::now();
      ++running;
    }
    bool progressed = false;
    for (auto& job : jobs) {
      if (job.pid <= 0 || job.done) continue;
      const pid_t r = ::waitpid(job.pid, &job.status, WNOHANG);
      if (r == job.pid) {
        job.done = true;
      } else if (std::chrono::steady_clock::now() - job.started > timeout) {
        ::kill(job.pid, SIGKILL);
        ::waitpid(job.pid, &job.status, 0);
        job.done = true;
        job.timed_out = true;
      }
      if (job.done) {
        --running;
        ++finished;
        progressed = true;
        std::string failure;
        if (job.timed_out) {
          failure = "timed out after " + std::to_string(spec.timeout_seconds) + " s";
        } else if (!WIFEXITED(job.status) || WEXITSTATUS(job.status) != 0) {
          failure = "exited with status " + std::to_string(WIFEXITED(job.status) ? WEXITSTATUS(job.status) : -1);
        }
        if (!failure.empty()) {
          const auto diag = tail_of(job.log);
          kill_all();
          throw DistortionFailedError("external", spec.executable + " " + failure + (diag.empty() ? "" : ": " + diag));
        }
      }
    }
    if (!progressed) std::this_thread::sleep_for(std::chrono::milliseconds(2));
  }

  auto out = torch::empty_like(x);
  for (std::int64_t i = 0; i < n; ++i) {
    const auto& job = jobs[static_cast<std::size_t>(i)];
    torch::Tensor img;
    try {
      img = load_image(job.output);
    } catch (const Error& e) {
      throw DistortionFailedError("external", std::string("malformed output: ") + e.what());
    }
    if (img.size(1) != x.size(2) || img.size(2) != x.size(3)) {
      throw DistortionFailedError("external", "output is " + std::to_string(img.size(1)) + "x" +
                                                  std::to_string(img.size(2)) + ", expected " +
                                                  std::to_string(x.size(2)) + "x" + std::to_string(x.size(3)));
    }
    out[i].copy_(img);
  }
  return ImageBatch{out};
}

}  // namespace end2::distortions
