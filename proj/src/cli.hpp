#pragma once

namespace gml::cli {

// Dispatches gen-data / train / eval / gradcheck / heatmap.
// Exit codes: 0 success, 1 usage error, 2 runtime failure.
int run(int argc, const char* const* argv);

}  // namespace gml::cli
