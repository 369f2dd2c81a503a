#ifndef LORB_LORB_HPP_
#define LORB_LORB_HPP_

// Umbrella header for the N-best rescoring engine.

#include "lorb/checkpoint.hpp"
#include "lorb/encoder.hpp"
#include "lorb/errors.hpp"
#include "lorb/experiments.hpp"
#include "lorb/gradcheck.hpp"
#include "lorb/logging.hpp"
#include "lorb/losses.hpp"
#include "lorb/manifest.hpp"
#include "lorb/nbest.hpp"
#include "lorb/nbest_io.hpp"
#include "lorb/peft.hpp"
#include "lorb/rescore.hpp"
#include "lorb/rng.hpp"
#include "lorb/serde.hpp"
#include "lorb/synth.hpp"
#include "lorb/tensor.hpp"
#include "lorb/trainer.hpp"
#include "lorb/vocab.hpp"
#include "lorb/wer.hpp"

#endif  // LORB_LORB_HPP_
