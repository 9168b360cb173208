#pragma once

#define REVLAB_VERSION "0.1.0"
