#include "sprout/trace.hpp"

#include <mutex>

namespace sprout::trace {

namespace {
std::mutex& hook_mutex() {
    static std::mutex m;
    return m;
}
Hook& hook_slot() {
    static Hook h;
    return h;
}
}  // namespace

void set_hook(Hook hook) {
    std::lock_guard lock(hook_mutex());
    hook_slot() = std::move(hook);
}

void record(Access access, const std::filesystem::path& path) {
    std::lock_guard lock(hook_mutex());
    if (hook_slot()) hook_slot()(access, path);
}

}  // namespace sprout::trace
