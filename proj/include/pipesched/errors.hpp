// Copyright 2026 The pipesched Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef PIPESCHED_ERRORS_HPP_
#define PIPESCHED_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace pipesched {

// All library errors derive from Error so callers (the CLI in particular) can
// map them to exit codes with a single catch.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define PIPESCHED_DEFINE_ERROR(Name)   \
  class Name : public Error {          \
   public:                             \
    using Error::Error;                \
  }

PIPESCHED_DEFINE_ERROR(ParseError);
PIPESCHED_DEFINE_ERROR(InvariantViolation);
PIPESCHED_DEFINE_ERROR(PreconditionViolation);
PIPESCHED_DEFINE_ERROR(IncompleteSchedule);
PIPESCHED_DEFINE_ERROR(NegativeUsage);
PIPESCHED_DEFINE_ERROR(InvalidSchedule);
PIPESCHED_DEFINE_ERROR(UnknownVariable);
PIPESCHED_DEFINE_ERROR(NonIntegralBinary);
PIPESCHED_DEFINE_ERROR(ConstraintResidual);
PIPESCHED_DEFINE_ERROR(InfeasibleWarmStart);
PIPESCHED_DEFINE_ERROR(Infeasible);
PIPESCHED_DEFINE_ERROR(NoFeasibleSchedule);
PIPESCHED_DEFINE_ERROR(SessionClosed);
PIPESCHED_DEFINE_ERROR(DegenerateInstance);
PIPESCHED_DEFINE_ERROR(StorageError);
PIPESCHED_DEFINE_ERROR(ShapeMismatch);
PIPESCHED_DEFINE_ERROR(IoError);

#undef PIPESCHED_DEFINE_ERROR

}  // namespace pipesched

#endif  // PIPESCHED_ERRORS_HPP_
