#include "rsmtune/objective.hpp"

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cmath>
#include <csignal>
#include <cstring>
#include <mutex>
#include <random>
#include <thread>

#include <fcntl.h>
#include <poll.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <fmt/format.h>
#include <json.hpp>

#include "rsmtune/error.hpp"

extern char** environ;

namespace rsmtune {

namespace {

const NamedValue& lookup(const Settings& settings, const std::string& name) {
  for (const auto& s : settings)
    if (s.name == name) return s;
  throw Error(fmt::format("settings do not cover factor '{}'", name));
}

class QuadraticObjective final : public Objective {
 public:
  QuadraticObjective(QuadraticSurface surface, std::vector<FactorSpec> factors)
      : surface_(std::move(surface)), factors_(std::move(factors)) {
    const auto p = static_cast<Eigen::Index>(factors_.size());
    if (surface_.b_matrix.rows() != p || surface_.b_matrix.cols() != p)
      throw Error(fmt::format("objective: B must be {0}x{0}", p));
    if (surface_.b.size() != p) throw Error(fmt::format("objective: b must have {} entries", p));
    if (!surface_.b_matrix.isApprox(surface_.b_matrix.transpose(), 1e-12))
      throw Error("objective: B must be symmetric");
    if (!(surface_.noise_sigma >= 0.0)) throw Error("objective: noise_sigma must be >= 0");
  }

  double evaluate(const Settings& decoded, std::uint64_t run_id) const override {
    Eigen::VectorXd x(static_cast<Eigen::Index>(factors_.size()));
    for (std::size_t j = 0; j < factors_.size(); ++j)
      x(static_cast<Eigen::Index>(j)) = encode(factors_[j], lookup(decoded, factors_[j].name).value);
    double y = surface_.c + surface_.b.dot(x) + x.dot(surface_.b_matrix * x);
    if (surface_.noise_sigma > 0.0) {
      std::seed_seq seq{static_cast<std::uint32_t>(surface_.seed),
                        static_cast<std::uint32_t>(surface_.seed >> 32),
                        static_cast<std::uint32_t>(run_id),
                        static_cast<std::uint32_t>(run_id >> 32)};
      std::mt19937_64 rng(seq);
      std::normal_distribution<double> noise(0.0, surface_.noise_sigma);
      y += noise(rng);
    }
    return y;
  }

 private:
  QuadraticSurface surface_;
  std::vector<FactorSpec> factors_;
};

// Owns a pipe end; closes on destruction.
class Fd {
 public:
  Fd() = default;
  explicit Fd(int fd) : fd_(fd) {}
  Fd(Fd&& other) noexcept : fd_(std::exchange(other.fd_, -1)) {}
  Fd& operator=(Fd&& other) noexcept {
    reset();
    fd_ = std::exchange(other.fd_, -1);
    return *this;
  }
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;
  ~Fd() { reset(); }

  int get() const { return fd_; }
  void reset() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

 private:
  int fd_ = -1;
};

std::pair<Fd, Fd> make_pipe() {
  int fds[2];
  if (::pipe2(fds, O_CLOEXEC) != 0) throw Error(fmt::format("pipe: {}", std::strerror(errno)));
  return {Fd(fds[0]), Fd(fds[1])};
}

void ignore_sigpipe() {
  static std::once_flag once;
  std::call_once(once, [] { std::signal(SIGPIPE, SIG_IGN); });
}

class CommandObjective final : public Objective {
 public:
  CommandObjective(ExternalCommand command, std::vector<FactorSpec> factors)
      : command_(std::move(command)), factors_(std::move(factors)) {
    if (command_.argv.empty()) throw Error("objective: external command is empty");
    if (!(command_.timeout_seconds > 0.0))
      throw Error("objective: timeout_seconds must be positive");
    ignore_sigpipe();
  }

  double evaluate(const Settings& decoded, std::uint64_t run_id) const override {
    using Clock = std::chrono::steady_clock;
    const auto deadline =
        Clock::now() + std::chrono::duration_cast<Clock::duration>(
                           std::chrono::duration<double>(command_.timeout_seconds));
    const std::string request = request_line(factors_, decoded, run_id) + "\n";

    auto [in_read, in_write] = make_pipe();
    auto [out_read, out_write] = make_pipe();
    auto [err_read, err_write] = make_pipe();

    posix_spawn_file_actions_t actions;
    posix_spawn_file_actions_init(&actions);
    posix_spawn_file_actions_adddup2(&actions, in_read.get(), STDIN_FILENO);
    posix_spawn_file_actions_adddup2(&actions, out_write.get(), STDOUT_FILENO);
    posix_spawn_file_actions_adddup2(&actions, err_write.get(), STDERR_FILENO);
    std::vector<char*> argv;
    for (const auto& a : command_.argv) argv.push_back(const_cast<char*>(a.c_str()));
    argv.push_back(nullptr);
    pid_t pid = 0;
    const int rc = ::posix_spawnp(&pid, argv[0], &actions, nullptr, argv.data(), environ);
    posix_spawn_file_actions_destroy(&actions);
    if (rc != 0)
      throw EvaluationError(fmt::format("run {}: cannot start '{}'", run_id, command_.argv[0]),
                            std::strerror(rc));
    in_read.reset();
    out_write.reset();
    err_write.reset();

    // The request is tiny; a child that exits without reading it gets EPIPE
    // here, which is not an error in itself.
    std::size_t written = 0;
    while (written < request.size()) {
      const ssize_t n = ::write(in_write.get(), request.data() + written, request.size() - written);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) break;
      written += static_cast<std::size_t>(n);
    }
    in_write.reset();

    std::string out;
    std::string err;
    bool timed_out = false;
    std::vector<pollfd> fds{{out_read.get(), POLLIN, 0}, {err_read.get(), POLLIN, 0}};
    while (fds[0].fd >= 0 || fds[1].fd >= 0) {
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now());
      if (left.count() <= 0) {
        timed_out = true;
        break;
      }
      const int ready = ::poll(fds.data(), fds.size(), static_cast<int>(std::min<long long>(left.count(), 1000)));
      if (ready < 0 && errno != EINTR) break;
      for (std::size_t i = 0; i < fds.size(); ++i) {
        if (fds[i].fd < 0 || !(fds[i].revents & (POLLIN | POLLHUP | POLLERR))) continue;
        char buf[4096];
        const ssize_t n = ::read(fds[i].fd, buf, sizeof buf);
        if (n > 0) {
          (i == 0 ? out : err).append(buf, static_cast<std::size_t>(n));
        } else if (n == 0 || errno != EINTR) {
          fds[i].fd = -1;
        }
      }
    }

    int status = 0;
    while (!timed_out) {
      const pid_t w = ::waitpid(pid, &status, WNOHANG);
      if (w == pid) break;
      if (w < 0 && errno != EINTR) break;
      if (Clock::now() >= deadline) {
        timed_out = true;
        break;
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(2));
    }
    if (timed_out) {
      ::kill(pid, SIGKILL);
      ::waitpid(pid, &status, 0);
      throw EvaluationError(fmt::format("run {}: objective timed out after {} s", run_id,
                                        command_.timeout_seconds),
                            err);
    }
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
      const std::string how = WIFEXITED(status)
                                  ? fmt::format("exit code {}", WEXITSTATUS(status))
                                  : fmt::format("signal {}", WTERMSIG(status));
      throw EvaluationError(fmt::format("run {}: objective failed ({})", run_id, how), err);
    }
    const std::string line = out.substr(0, out.find('\n'));
    try {
      return parse_reply(line);
    } catch (const EvaluationError& e) {
      throw EvaluationError(fmt::format("run {}: {}", run_id, e.what()),
                            fmt::format("stdout: {}\nstderr: {}", out, err));
    }
  }

 private:
  ExternalCommand command_;
  std::vector<FactorSpec> factors_;
};

}  // namespace

std::unique_ptr<Objective> make_objective(const ObjectiveSpec& spec,
                                          std::vector<FactorSpec> factors) {
  if (const auto* q = std::get_if<QuadraticSurface>(&spec))
    return std::make_unique<QuadraticObjective>(*q, std::move(factors));
  return std::make_unique<CommandObjective>(std::get<ExternalCommand>(spec), std::move(factors));
}

double evaluate(const ObjectiveSpec& spec, std::span<const FactorSpec> factors,
                const Settings& decoded, std::uint64_t run_id) {
  return make_objective(spec, {factors.begin(), factors.end()})->evaluate(decoded, run_id);
}

std::string request_line(std::span<const FactorSpec> factors, const Settings& decoded,
                         std::uint64_t run_id) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& f : factors) {
    const double v = lookup(decoded, f.name).value;
    if (f.discrete()) {
      j[f.name] = static_cast<long long>(v);
    } else {
      j[f.name] = v;
    }
  }
  j["run_id"] = run_id;
  return j.dump();
}

double parse_reply(const std::string& line) {
  const auto j = nlohmann::json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object())
    throw EvaluationError("malformed reply, expected {\"loss\": <number>}", line);
  const auto it = j.find("loss");
  if (it == j.end() || !it->is_number())
    throw EvaluationError("reply has no numeric \"loss\"", line);
  const double loss = it->get<double>();
  if (!std::isfinite(loss)) throw EvaluationError("reply loss is not finite", line);
  return loss;
}

double poisson_deviance(const DevianceSample& sample) {
  if (sample.counts.size() != sample.fitted.size())
    throw Error(fmt::format("deviance: {} counts but {} fitted values", sample.counts.size(),
                            sample.fitted.size()));
  if (sample.counts.empty()) throw Error("deviance: empty sample");
  double total = 0.0;
  for (std::size_t i = 0; i < sample.counts.size(); ++i) {
    const double n = sample.counts[i];
    const double mu = sample.fitted[i];
    if (!(mu > 0.0) || !std::isfinite(mu))
      throw Error(fmt::format("deviance: fitted value {} at index {} is not positive", mu, i));
    if (!(n >= 0.0) || std::floor(n) != n)
      throw Error(fmt::format("deviance: count {} at index {} is not a non-negative integer", n, i));
    if (n == 0.0) {
      total += 2.0 * mu;
    } else {
      const double ratio = mu / n;
      total += 2.0 * n * (ratio - 1.0 - std::log(ratio));
    }
  }
  return total / static_cast<double>(sample.counts.size());
}

}  // namespace rsmtune
