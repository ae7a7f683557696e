// SPDX-License-Identifier: Apache-2.0
#include "noisegauge/cli.hpp"

int main(int argc, char** argv) { return noisegauge::run_cli(argc, argv); }
