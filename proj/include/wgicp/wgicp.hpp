// wgicp - weighted generalized ICP registration and lidar odometry
// SPDX-License-Identifier: MIT

#ifndef WGICP_WGICP_HPP
#define WGICP_WGICP_HPP

#include "wgicp/autodiff.hpp"
#include "wgicp/covariance.hpp"
#include "wgicp/errors.hpp"
#include "wgicp/geometry.hpp"
#include "wgicp/io_kitti.hpp"
#include "wgicp/knn.hpp"
#include "wgicp/odometry.hpp"
#include "wgicp/registration.hpp"
#include "wgicp/train.hpp"
#include "wgicp/weights.hpp"

#endif  // WGICP_WGICP_HPP
