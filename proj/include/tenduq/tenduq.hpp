#ifndef TENDUQ_TENDUQ_HPP
#define TENDUQ_TENDUQ_HPP

#include "tenduq/calibrate.hpp"
#include "tenduq/core.hpp"
#include "tenduq/forward.hpp"
#include "tenduq/influence.hpp"
#include "tenduq/pce.hpp"
#include "tenduq/pipeline.hpp"
#include "tenduq/separability.hpp"
#include "tenduq/surrogate.hpp"

#endif  // TENDUQ_TENDUQ_HPP
