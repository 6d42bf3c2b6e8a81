// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "cmscope/bytes.hpp"
#include "cmscope/cfg.hpp"
#include "cmscope/cli.hpp"
#include "cmscope/detectors.hpp"
#include "cmscope/disasm.hpp"
#include "cmscope/error.hpp"
#include "cmscope/image.hpp"
#include "cmscope/ingest.hpp"
#include "cmscope/profiles.hpp"
#include "cmscope/report.hpp"
#include "cmscope/secmodel.hpp"
