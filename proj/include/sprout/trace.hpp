#pragma once

#include <filesystem>
#include <functional>

namespace sprout::trace {

enum class Access { read, write };

using Hook = std::function<void(Access, const std::filesystem::path&)>;

/// Installs a process-wide file-access observer (nullptr removes it). Every
/// file the library reads or writes is reported before it is opened.
void set_hook(Hook hook);

void record(Access access, const std::filesystem::path& path);

}  // namespace sprout::trace
