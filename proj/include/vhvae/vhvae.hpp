#pragma once

#include "vhvae/autodiff.hpp"
#include "vhvae/checkpoint.hpp"
#include "vhvae/eval_metrics.hpp"
#include "vhvae/grad_check.hpp"
#include "vhvae/key_value.hpp"
#include "vhvae/losses.hpp"
#include "vhvae/matrix.hpp"
#include "vhvae/midi_io.hpp"
#include "vhvae/model.hpp"
#include "vhvae/pca.hpp"
#include "vhvae/run_config.hpp"
#include "vhvae/theory_analysis.hpp"
#include "vhvae/trainer.hpp"
#include "vhvae/tree_attention.hpp"
