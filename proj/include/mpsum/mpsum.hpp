#pragma once

#include "mpsum/checkpoint.hpp"
#include "mpsum/config.hpp"
#include "mpsum/encoder.hpp"
#include "mpsum/error.hpp"
#include "mpsum/head.hpp"
#include "mpsum/lora.hpp"
#include "mpsum/model.hpp"
#include "mpsum/numerics.hpp"
#include "mpsum/paraphrase.hpp"
#include "mpsum/poincare.hpp"
#include "mpsum/rouge.hpp"
#include "mpsum/selfcheck.hpp"
#include "mpsum/ssm.hpp"
#include "mpsum/summarize.hpp"
#include "mpsum/text.hpp"
#include "mpsum/training.hpp"
