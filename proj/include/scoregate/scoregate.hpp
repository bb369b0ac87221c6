#pragma once

#include "scoregate/autodiff.hpp"
#include "scoregate/datasets.hpp"
#include "scoregate/error.hpp"
#include "scoregate/explain.hpp"
#include "scoregate/models.hpp"
#include "scoregate/rng.hpp"
#include "scoregate/scores.hpp"
#include "scoregate/tensor.hpp"
#include "scoregate/training.hpp"
