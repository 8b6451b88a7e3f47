#pragma once

#include "fourier_kv/attention.hpp"
#include "fourier_kv/basis_compare.hpp"
#include "fourier_kv/cache.hpp"
#include "fourier_kv/csv.hpp"
#include "fourier_kv/dim_select.hpp"
#include "fourier_kv/legt.hpp"
#include "fourier_kv/matrix.hpp"
#include "fourier_kv/parallel.hpp"
#include "fourier_kv/selection_manifest.hpp"
#include "fourier_kv/spectral.hpp"
#include "fourier_kv/synthetic.hpp"
#include "fourier_kv/tiny_model.hpp"
#include "fourier_kv/trace.hpp"
