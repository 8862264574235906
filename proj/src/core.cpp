#include "dhi/core.hpp"

#include <atomic>
#include <iostream>

namespace dhi {

namespace {

void stderr_warning(const std::string& message) { std::cerr << "warning: " << message << '\n'; }

std::atomic<WarningHandler> g_warning_handler{&stderr_warning};

}  // namespace

void set_warning_handler(WarningHandler handler) {
  g_warning_handler.store(handler != nullptr ? handler : &stderr_warning);
}

void warn(const std::string& message) { g_warning_handler.load()(message); }

}  // namespace dhi
