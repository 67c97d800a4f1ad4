"""Shared fit/predict plumbing for the graph regressors."""

from __future__ import annotations

from sklearn.base import BaseEstimator, RegressorMixin

from ..errors import ContractError
from ..validation import check_graph, check_masks, check_targets


class GraphRegressorBase(RegressorMixin, BaseEstimator):
    """Estimator convention over (graph, targets, masks) triples.

    Subclasses provide ``_init_params(graph)`` and
    ``_forward(graph, params, features=None)``; training and prediction are
    identical across models.
    """

    model_name = "base"

    def _init_params(self, graph):
        raise NotImplementedError

    def _forward(self, graph, params, features=None):
        raise NotImplementedError

    def fit(self, graph, targets, masks):
        from ..training import TrainConfig, train

        check_graph(graph)
        check_targets(graph, targets)
        check_masks(graph, masks)
        config = TrainConfig(
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            weight_decay=self.weight_decay,
            beta1=self.beta1,
            beta2=self.beta2,
            eps=self.eps,
            seed=self.seed,
            model_kind=self.model_name,
        )
        result = train(self._forward, graph, self._init_params(graph),
                       targets, masks, config)
        self.params_ = result.params
        self.history_ = result.history
        self.best_epoch_ = result.best_epoch
        return self

    def predict(self, graph):
        if not hasattr(self, "params_"):
            raise ContractError("estimator is not fitted; call fit first")
        check_graph(graph)
        return self._forward(graph, self.params_).data.copy()

    def forward_tensor(self, graph, features=None, params=None):
        """Prediction as a Tensor; pass a features Tensor to differentiate
        against the inputs under an active tape."""
        if params is None:
            if not hasattr(self, "params_"):
                raise ContractError("estimator is not fitted; call fit first")
            params = self.params_
        return self._forward(graph, params, features=features)
