#pragma once

#include "bomtrace/error.hpp"
#include "bomtrace/events.hpp"
#include "bomtrace/hashing.hpp"
#include "bomtrace/live.hpp"
#include "bomtrace/merkle.hpp"
#include "bomtrace/path_filter.hpp"
#include "bomtrace/pipeline.hpp"
#include "bomtrace/process_tree.hpp"
#include "bomtrace/purl.hpp"
#include "bomtrace/raw_record.hpp"
#include "bomtrace/sbom.hpp"
#include "bomtrace/sha256.hpp"
#include "bomtrace/stats.hpp"
#include "bomtrace/verify.hpp"
