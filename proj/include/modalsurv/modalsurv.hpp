#ifndef MODALSURV_MODALSURV_HPP
#define MODALSURV_MODALSURV_HPP

#include "modalsurv/common.hpp"
#include "modalsurv/config.hpp"
#include "modalsurv/coxph.hpp"
#include "modalsurv/datamodel.hpp"
#include "modalsurv/deephit.hpp"
#include "modalsurv/io.hpp"
#include "modalsurv/pipeline.hpp"
#include "modalsurv/preprocess.hpp"
#include "modalsurv/survcore.hpp"

#endif  // MODALSURV_MODALSURV_HPP
