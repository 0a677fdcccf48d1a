#pragma once

// Runs the namescore executable inside a scratch directory.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <sys/wait.h>

namespace cases {

struct RunResult {
    int exit_code = -1;
    std::string out;
    std::string err;
};

class Workspace {
public:
    explicit Workspace(const std::string& tag) {
        dir_ = std::filesystem::temp_directory_path() / ("namescore-" + tag + "-" + std::to_string(::getpid()));
        std::filesystem::remove_all(dir_);
        std::filesystem::create_directories(dir_);
    }
    ~Workspace() {
        std::error_code ec;
        std::filesystem::remove_all(dir_, ec);
    }
    Workspace(const Workspace&) = delete;
    Workspace& operator=(const Workspace&) = delete;

    const std::filesystem::path& dir() const { return dir_; }
    std::filesystem::path path(const std::string& rel) const { return dir_ / rel; }
    bool exists(const std::string& rel) const { return std::filesystem::exists(dir_ / rel); }

    /// `args` is appended to the executable path; runs with the workspace as cwd.
    RunResult run(const std::string& exe, const std::string& args, const std::string& env = "") const {
        const std::string cmd = "cd '" + dir_.string() + "' && " + env + (env.empty() ? "" : " ") + "'" + exe + "' " + args +
                                " >.stdout 2>.stderr";
        const int status = std::system(cmd.c_str());
        RunResult r;
        r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
        r.out = read(".stdout");
        r.err = read(".stderr");
        return r;
    }

    std::string read(const std::string& rel) const {
        std::ifstream in(dir_ / rel, std::ios::binary);
        std::ostringstream ss;
        ss << in.rdbuf();
        return ss.str();
    }

    void write(const std::string& rel, const std::string& content) const {
        std::ofstream out(dir_ / rel, std::ios::binary);
        out << content;
    }

private:
    std::filesystem::path dir_;
};

}  // namespace cases
