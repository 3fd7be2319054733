#pragma once

// Umbrella header: the whole library in one include.

#include <nsp/rational.hpp>

#include <nsp/ast.hpp>
#include <nsp/parser.hpp>
#include <nsp/typecheck.hpp>

#include <nsp/network.hpp>
#include <nsp/interval.hpp>
#include <nsp/simplex.hpp>

#include <nsp/logic.hpp>
#include <nsp/train.hpp>

#include <nsp/verifier.hpp>
#include <nsp/certificate.hpp>
#include <nsp/checker.hpp>

#include <nsp/simulate.hpp>
#include <nsp/bridge.hpp>

#include <nsp/config.hpp>
#include <nsp/driver.hpp>
