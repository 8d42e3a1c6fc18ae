#pragma once

#include <filesystem>
#include <vector>

#include <json.hpp>

namespace tempest::detail {

struct Blob {
  nlohmann::json header;
  std::vector<double> payload;
};

void write_blob(const std::filesystem::path& path, const Blob& blob);
Blob read_blob(const std::filesystem::path& path);

}  // namespace tempest::detail
