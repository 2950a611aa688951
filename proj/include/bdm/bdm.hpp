#pragma once

#include "bdm/autodiff.hpp"
#include "bdm/corpus.hpp"
#include "bdm/doc_composer.hpp"
#include "bdm/embedding_io.hpp"
#include "bdm/error.hpp"
#include "bdm/experiment.hpp"
#include "bdm/mining.hpp"
#include "bdm/nn.hpp"
#include "bdm/parallel.hpp"
#include "bdm/parameter.hpp"
#include "bdm/ranking_loss.hpp"
#include "bdm/sentence_encoder.hpp"
#include "bdm/tensor.hpp"
#include "bdm/text.hpp"
