#pragma once

namespace fewshot {

// Entry point behind the `fewshot` binary; exposed so tests can drive the
// CLI in-process. Exit codes: 0 success, 1 usage, 2 config/schema,
// 3 data, 4 numerical-check failure.
int cli_main(int argc, const char* const* argv);

}  // namespace fewshot
