"""Inference composition for fine-tuned tasks."""

import torch

from .tiling import flip_ensemble, tiled_predict
from .finetune import destandardize


class FewShotPredictor:
    """Binds a model, a fine-tuned task state and its support set.

    Support encodings are computed once per channel and reused across
    queries.  Predictions stack the group's channels in channel-index order
    and undo any label standardization applied during fine-tuning.  Raw
    values are returned (logits for categorical channels); callers apply
    thresholds or argmax as the task demands.
    """

    def __init__(self, model, finetuned, support):
        self.model = model
        self.state = finetuned
        self.support = support
        self._caches = []
        with torch.no_grad():
            for ch in finetuned.channels:
                c = ch.task.channel_index
                pairs = [(img, lab[c : c + 1]) for img, lab in support]
                self._caches.append(model.encode_support(pairs, ch.params))

    @torch.no_grad()
    def predict(self, query) -> torch.Tensor:
        """query: [I, 3, H, W] -> stacked prediction [C, H, W]."""
        outs = []
        for ch, cache in zip(self.state.channels, self._caches):
            out = self.model.predict_cached(query, cache, ch.params)  # [1, H, W]
            if ch.label_stats is not None:
                out = destandardize(out, ch.label_stats)
            outs.append(out[0])
        return torch.stack(outs)

    def predict_tiled(self, query, tile, overlap, sigma=None) -> torch.Tensor:
        return tiled_predict(self.predict, query, tile, overlap, sigma=sigma)

    def predict_flip_ensemble(self, query, channel_parity=None,
                              flip_covariant=True) -> torch.Tensor:
        return flip_ensemble(
            self.predict, query, channel_parity=channel_parity,
            flip_covariant=flip_covariant,
        )
