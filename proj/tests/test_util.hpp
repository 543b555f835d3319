#pragma once

#include "selfens/pipeline.hpp"
#include "selfens/rng.hpp"

#include <cstdlib>
#include <sys/wait.h>
#include <unistd.h>
#include <filesystem>
#include <fstream>
#include <string>

namespace testutil {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
  explicit TempDir(const std::string &tag = "selfens") {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            (tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir &) = delete;
  TempDir &operator=(const TempDir &) = delete;

  const std::filesystem::path &path() const { return path_; }
  std::filesystem::path operator/(const std::string &name) const { return path_ / name; }

private:
  std::filesystem::path path_;
};

inline void write_file(const std::filesystem::path &path, const std::string &text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
}

inline std::string read_file(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Random gray image written as PGM.
inline void write_gray(const std::filesystem::path &path, int side, std::uint64_t seed) {
  selfens::Rng rng(seed);
  selfens::Image img(side, side, 1);
  for (auto &p : img.pixels)
    p = static_cast<float>(rng.uniform());
  selfens::write_pnm(img, path);
}

inline int run_cli(const std::string &args, const std::filesystem::path &stdout_file,
                   const std::filesystem::path &stderr_file) {
  const std::string cmd = std::string(SELFENS_CLI_PATH) + " " + args + " >" +
                          stdout_file.string() + " 2>" + stderr_file.string();
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

} // namespace testutil
