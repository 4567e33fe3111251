#include "memeclf/ocr.hpp"

#include <fcntl.h>
#include <poll.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <filesystem>
#include <sstream>
#include <vector>

#include <spdlog/spdlog.h>

#include "memeclf/errors.hpp"
#include "memeclf/io.hpp"

extern char** environ;

namespace memeclf {

OcrAdapter parse_ocr_adapter(const std::string& name) {
  if (name == "none") return OcrAdapter::None;
  if (name == "sidecar") return OcrAdapter::Sidecar;
  if (name == "command") return OcrAdapter::Command;
  throw ConfigError("unknown OCR adapter '" + name + "' (expected none, sidecar or command)");
}

std::string to_string(OcrAdapter adapter) {
  switch (adapter) {
    case OcrAdapter::None: return "none";
    case OcrAdapter::Command: return "command";
    case OcrAdapter::Sidecar: break;
  }
  return "sidecar";
}

namespace {

struct ProcessResult {
  int status = 0;
  std::string out;
  std::string err;
};

ProcessResult run_process(const std::vector<std::string>& argv) {
  int out_pipe[2];
  int err_pipe[2];
  if (pipe(out_pipe) != 0) throw OcrError("pipe failed");
  if (pipe(err_pipe) != 0) {
    close(out_pipe[0]);
    close(out_pipe[1]);
    throw OcrError("pipe failed");
  }
  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_adddup2(&actions, out_pipe[1], STDOUT_FILENO);
  posix_spawn_file_actions_adddup2(&actions, err_pipe[1], STDERR_FILENO);
  posix_spawn_file_actions_addclose(&actions, out_pipe[0]);
  posix_spawn_file_actions_addclose(&actions, err_pipe[0]);

  std::vector<char*> args;
  for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
  args.push_back(nullptr);
  pid_t pid = 0;
  const int rc = posix_spawnp(&pid, args[0], &actions, nullptr, args.data(), environ);
  posix_spawn_file_actions_destroy(&actions);
  close(out_pipe[1]);
  close(err_pipe[1]);
  if (rc != 0) {
    close(out_pipe[0]);
    close(err_pipe[0]);
    throw OcrError("cannot start OCR command '" + argv[0] + "': " + std::strerror(rc));
  }

  ProcessResult result;
  pollfd fds[2] = {{out_pipe[0], POLLIN, 0}, {err_pipe[0], POLLIN, 0}};
  std::string* sinks[2] = {&result.out, &result.err};
  int open_fds = 2;
  char buf[4096];
  while (open_fds > 0) {
    if (poll(fds, 2, -1) < 0) {
      if (errno == EINTR) continue;
      break;
    }
    for (int i = 0; i < 2; ++i) {
      if (fds[i].fd < 0 || !(fds[i].revents & (POLLIN | POLLHUP | POLLERR))) continue;
      const ssize_t n = read(fds[i].fd, buf, sizeof buf);
      if (n > 0) {
        sinks[i]->append(buf, static_cast<std::size_t>(n));
      } else {
        close(fds[i].fd);
        fds[i].fd = -1;
        --open_fds;
      }
    }
  }
  int status = 0;
  while (waitpid(pid, &status, 0) < 0 && errno == EINTR) {
  }
  result.status = status;
  return result;
}

std::vector<std::string> split_command(const std::string& command) {
  std::istringstream in(command);
  std::vector<std::string> out;
  for (std::string word; in >> word;) out.push_back(word);
  return out;
}

}  // namespace

std::string ocr_extract(const Corpus& corpus, const MemeRecord& record, const OcrConfig& config) {
  switch (config.adapter) {
    case OcrAdapter::None:
      if (!record.text) throw OcrError("record '" + record.id + "' has no text and OCR is disabled");
      return *record.text;
    case OcrAdapter::Sidecar: {
      const std::string path = corpus.image_file(record) + ".txt";
      if (!std::filesystem::exists(path)) {
        spdlog::warn("no OCR sidecar for '{}' at {}; using empty text", record.id, path);
        return "";
      }
      return read_file(path);
    }
    case OcrAdapter::Command: {
      auto argv = split_command(config.command);
      if (argv.empty()) throw OcrError("OCR command adapter has no command configured");
      argv.push_back(corpus.image_file(record));
      const ProcessResult r = run_process(argv);
      if (!WIFEXITED(r.status) || WEXITSTATUS(r.status) != 0) {
        const int code = WIFEXITED(r.status) ? WEXITSTATUS(r.status) : -1;
        throw OcrError("OCR command failed for '" + record.id + "' (exit " + std::to_string(code) +
                       "): " + r.err);
      }
      return r.out;
    }
  }
  throw OcrError("unknown OCR adapter");
}

std::size_t resolve_texts(Corpus& corpus, const OcrConfig& config) {
  std::size_t filled = 0;
  for (auto& r : corpus.records) {
    if (r.text) continue;
    r.text = ocr_extract(corpus, r, config);
    ++filled;
  }
  return filled;
}

}  // namespace memeclf
