#ifndef BIMAC_CLI_HPP
#define BIMAC_CLI_HPP

namespace bimac {

// Subcommand dispatcher. Exit codes: 0 ok, 2 config error, 3 data error,
// 4 numeric failure (NaN / undefined metric), 5 gradient check failure.
int run_cli(int argc, char** argv);

} // namespace bimac

#endif
