#pragma once

#include <csignal>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include <sys/wait.h>
#include <unistd.h>

#include "nestkit/config.hpp"
#include "nestkit/errors.hpp"
#include "nestkit/problems.hpp"

namespace nestkit {

// A user likelihood running as a child process speaking a line protocol:
// the parent writes one point per line (space-separated, full double
// precision) to the child's stdin, and the child answers with one log
// likelihood per line on its stdout.  The child is spawned once and reused
// for every evaluation; it must read line-by-line and flush every reply
// (block-buffered filters deadlock — e.g. plain mawk needs -W interactive,
// python needs -u).
class ExternalLikelihood {
  public:
    explicit ExternalLikelihood(std::string command) : command_(std::move(command)) {
        if (command_.empty()) throw invalid_argument("external likelihood: empty command");
        // A dying child must surface as a read/write error, not a SIGPIPE kill.
        std::signal(SIGPIPE, SIG_IGN);

        int to_child[2], from_child[2];
        if (pipe(to_child) != 0 || pipe(from_child) != 0)
            throw error("external likelihood: pipe failed");
        pid_ = fork();
        if (pid_ < 0) throw error("external likelihood: fork failed");
        if (pid_ == 0) {
            dup2(to_child[0], STDIN_FILENO);
            dup2(from_child[1], STDOUT_FILENO);
            close(to_child[0]);
            close(to_child[1]);
            close(from_child[0]);
            close(from_child[1]);
            execl("/bin/sh", "sh", "-c", command_.c_str(), static_cast<char*>(nullptr));
            _exit(127);
        }
        close(to_child[0]);
        close(from_child[1]);
        in_ = fdopen(to_child[1], "w");
        out_ = fdopen(from_child[0], "r");
        if (!in_ || !out_) throw error("external likelihood: fdopen failed");
    }

    ExternalLikelihood(const ExternalLikelihood&) = delete;
    ExternalLikelihood& operator=(const ExternalLikelihood&) = delete;

    ~ExternalLikelihood() {
        if (in_) std::fclose(in_);  // EOF tells a well-behaved child to exit
        if (out_) std::fclose(out_);
        if (pid_ > 0) waitpid(pid_, nullptr, 0);
    }

    double operator()(const std::vector<double>& point) {
        for (std::size_t i = 0; i < point.size(); ++i)
            std::fprintf(in_, i ? " %.17g" : "%.17g", point[i]);
        std::fputc('\n', in_);
        if (std::fflush(in_) != 0)
            throw data_error("external likelihood '" + command_ + "' stopped accepting points");
        char* line = nullptr;
        std::size_t cap = 0;
        ssize_t n = getline(&line, &cap, out_);
        std::unique_ptr<char, decltype(&std::free)> guard(line, &std::free);
        if (n <= 0) throw data_error("external likelihood '" + command_ + "' closed its output");
        char* end = nullptr;
        double logl = std::strtod(line, &end);
        while (end && (*end == ' ' || *end == '\t' || *end == '\n' || *end == '\r')) ++end;
        if (end == line || (end && *end != '\0'))
            throw data_error("external likelihood '" + command_ + "' sent a malformed reply: " +
                             std::string(line, static_cast<std::size_t>(n)));
        return logl;
    }

    const std::string& command() const { return command_; }

  private:
    std::string command_;
    pid_t pid_ = -1;
    std::FILE* in_ = nullptr;
    std::FILE* out_ = nullptr;
};

// Assemble a runnable problem from a problem-file spec: the declared prior
// chain plus the external likelihood process.  The process handle is shared
// by every copy of the returned problem's likelihood function.
inline Problem make_external_problem(const ProblemSpec& spec) {
    if (spec.likelihood_command.empty())
        throw invalid_argument("problem file declares no likelihood command");
    Problem p;
    p.name = spec.name;
    p.dim = spec.prior.dim_in();
    p.prior = spec.prior;
    auto child = std::make_shared<ExternalLikelihood>(spec.likelihood_command);
    p.log_likelihood = [child](const std::vector<double>& x) { return (*child)(x); };
    return p;
}

}  // namespace nestkit
