#include "adpo/prefgen.hpp"

#include <cerrno>
#include <csignal>
#include <cstring>

#include <sys/wait.h>
#include <unistd.h>

namespace adpo::prefgen {

ExternalProcessJudge::ExternalProcessJudge(std::shared_ptr<const corpus::Vocabulary> vocab,
                                           const std::string& command)
    : vocab_(std::move(vocab)) {
    int in_pipe[2];
    int out_pipe[2];
    if (pipe(in_pipe) != 0) {
        throw IoError(std::string("judge: pipe failed: ") + std::strerror(errno));
    }
    if (pipe(out_pipe) != 0) {
        close(in_pipe[0]);
        close(in_pipe[1]);
        throw IoError(std::string("judge: pipe failed: ") + std::strerror(errno));
    }
    pid_ = fork();
    if (pid_ < 0) {
        throw IoError(std::string("judge: fork failed: ") + std::strerror(errno));
    }
    if (pid_ == 0) {
        dup2(in_pipe[0], STDIN_FILENO);
        dup2(out_pipe[1], STDOUT_FILENO);
        close(in_pipe[0]);
        close(in_pipe[1]);
        close(out_pipe[0]);
        close(out_pipe[1]);
        execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
        _exit(127);
    }
    close(in_pipe[0]);
    close(out_pipe[1]);
    to_child_ = in_pipe[1];
    from_child_ = out_pipe[0];
    std::signal(SIGPIPE, SIG_IGN);
}

ExternalProcessJudge::~ExternalProcessJudge() {
    if (to_child_ >= 0) close(to_child_);
    if (from_child_ >= 0) close(from_child_);
    if (pid_ > 0) {
        int status = 0;
        waitpid(pid_, &status, 0);
    }
}

JudgeVerdict ExternalProcessJudge::judge(const Context& x, const Response& a, const Response& b) {
    if (a.tokens.empty() || b.tokens.empty()) {
        throw InvalidArgument("judge: empty response");
    }
    const std::string line = judge_request(*vocab_, x, a, b).dump() + "\n";
    std::size_t sent = 0;
    while (sent < line.size()) {
        const ssize_t k = write(to_child_, line.data() + sent, line.size() - sent);
        if (k < 0) {
            if (errno == EINTR) continue;
            throw IoError(std::string("judge: write failed: ") + std::strerror(errno));
        }
        sent += static_cast<std::size_t>(k);
    }
    for (;;) {
        const auto nl = buffer_.find('\n');
        if (nl != std::string::npos) {
            const std::string reply = buffer_.substr(0, nl);
            buffer_.erase(0, nl + 1);
            return parse_judge_reply(reply);
        }
        char chunk[4096];
        const ssize_t k = read(from_child_, chunk, sizeof chunk);
        if (k < 0) {
            if (errno == EINTR) continue;
            throw IoError(std::string("judge: read failed: ") + std::strerror(errno));
        }
        if (k == 0) {
            throw IoError("judge process closed its output before replying");
        }
        buffer_.append(chunk, static_cast<std::size_t>(k));
    }
}

} // namespace adpo::prefgen
