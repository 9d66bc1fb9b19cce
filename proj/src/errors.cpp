#include "gk/errors.hpp"
