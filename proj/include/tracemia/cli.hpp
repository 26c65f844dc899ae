#pragma once

namespace tracemia {

// Exit codes: 0 success, 1 runtime error, 2 usage error.
int run_cli(int argc, char** argv);

} // namespace tracemia
