#pragma once

#include "sift/classifier.hpp"
#include "sift/corpus.hpp"
#include "sift/eval.hpp"
#include "sift/features.hpp"
#include "sift/fragmenter.hpp"
#include "sift/rng.hpp"
