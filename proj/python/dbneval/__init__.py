# Copyright 2026 The dbneval Authors.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#    http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Likelihood estimation for deep belief networks."""

from ._core import (
    Dbn,
    DataError,
    EnumerationBudgetExceeded,
    EstimatorSettings,
    FormatError,
    Grbm,
    Rbm,
    Srbm,
    __version__,
    energy,
    estimate_log_likelihood,
    exact_log_likelihood,
    gaussian_log_loss,
    kind,
    load_dataset,
    load_dbn,
    load_layer,
    log_partition,
    log_unnorm_visible_marginal,
    run_cli,
    save_dataset,
    save_dbn,
    save_layer,
)

__all__ = [
    "Dbn",
    "DataError",
    "EnumerationBudgetExceeded",
    "EstimatorSettings",
    "FormatError",
    "Grbm",
    "Rbm",
    "Srbm",
    "__version__",
    "energy",
    "estimate_log_likelihood",
    "exact_log_likelihood",
    "gaussian_log_loss",
    "kind",
    "load_dataset",
    "load_dbn",
    "load_layer",
    "log_partition",
    "log_unnorm_visible_marginal",
    "run_cli",
    "save_dataset",
    "save_dbn",
    "save_layer",
]
