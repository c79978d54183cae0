// Copyright Contributors to the msfa-forge project.
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

int main(int argc, char** argv) { return msfa::cli::run_cli(argc, argv); }
