#pragma once

#include "mpdetect/detector.hpp"
#include "mpdetect/error.hpp"
#include "mpdetect/eval.hpp"
#include "mpdetect/obs.hpp"
#include "mpdetect/raytracer.hpp"
#include "mpdetect/satgeo.hpp"
#include "mpdetect/vec3.hpp"
