#pragma once

#include "volact/commands.hpp"
#include "volact/config.hpp"
#include "volact/encoding.hpp"
#include "volact/errors.hpp"
#include "volact/fields.hpp"
#include "volact/gradcheck.hpp"
#include "volact/image_io.hpp"
#include "volact/linalg.hpp"
#include "volact/mlp.hpp"
#include "volact/parallel.hpp"
#include "volact/param_store.hpp"
#include "volact/renderer.hpp"
#include "volact/rng.hpp"
#include "volact/rootfind.hpp"
#include "volact/skeleton.hpp"
#include "volact/splits.hpp"
#include "volact/synth.hpp"
#include "volact/tape.hpp"
#include "volact/training.hpp"
