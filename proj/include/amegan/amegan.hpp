#ifndef AMEGAN_AMEGAN_HPP_
#define AMEGAN_AMEGAN_HPP_

#include "errors.hpp"
#include "tensor.hpp"
#include "random.hpp"
#include "autograd.hpp"
#include "conv.hpp"
#include "norm.hpp"
#include "layers.hpp"
#include "config.hpp"
#include "networks.hpp"
#include "modulation.hpp"
#include "losses.hpp"
#include "image_io.hpp"
#include "synthetic.hpp"
#include "adam.hpp"
#include "checkpoint.hpp"
#include "trainer.hpp"
#include "evaluator.hpp"
#include "service.hpp"

#endif // AMEGAN_AMEGAN_HPP_
