#pragma once

#include "checkpoint.hpp"
#include "config.hpp"
#include "corpus_store.hpp"
#include "evaluator.hpp"
#include "keyword_extract.hpp"
#include "lora.hpp"
#include "loss.hpp"
#include "model.hpp"
#include "optimizer.hpp"
#include "retrieval.hpp"
#include "synthetic.hpp"
#include "tokenizer.hpp"
#include "trainer.hpp"
#include "vocabulary.hpp"
