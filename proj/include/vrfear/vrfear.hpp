#pragma once

#include "vrfear/core.hpp"
#include "vrfear/error.hpp"
#include "vrfear/random.hpp"
#include "vrfear/text.hpp"
#include "vrfear/ingest.hpp"
#include "vrfear/align.hpp"
#include "vrfear/audio_features.hpp"
#include "vrfear/skeleton.hpp"
#include "vrfear/labels.hpp"
#include "vrfear/dataset.hpp"
#include "vrfear/net.hpp"
#include "vrfear/metrics.hpp"
#include "vrfear/synth.hpp"
#include "vrfear/pipeline.hpp"
#include "vrfear/service.hpp"
