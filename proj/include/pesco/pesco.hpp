#pragma once

// Umbrella header. remote.hpp is excluded on purpose: it pulls in the HTTP
// client; include it directly where the remote encoder is actually used.

#include "pesco/corpus.hpp"
#include "pesco/encoder.hpp"
#include "pesco/errors.hpp"
#include "pesco/evalreport.hpp"
#include "pesco/io.hpp"
#include "pesco/linalg.hpp"
#include "pesco/losses.hpp"
#include "pesco/matching.hpp"
#include "pesco/rng.hpp"
#include "pesco/selftrain.hpp"
