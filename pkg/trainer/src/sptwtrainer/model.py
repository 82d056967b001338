"""Mini-VGG 1-D classifier with non-local blocks, matching the shared weights layout.

Topology: [conv-relu-conv-relu-pool + NLB] x2, [conv-relu-pool] x2,
flatten (length-major), dense-relu, dense -> logit. Input is (B, 1024, 2)
with the two channels carrying Re/Im of the normalized spectrum.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn


class NonLocalBlock(nn.Module):
    """Residual embedded-Gaussian self-attention over the length axis.

    Operates on (B, L, C). The output projection starts at zero so an
    untrained block is the identity.
    """

    def __init__(self, channels: int, inner: int | None = None):
        super().__init__()
        self.inner = inner or max(channels // 2, 1)
        self.theta = nn.Linear(channels, self.inner)
        self.phi = nn.Linear(channels, self.inner)
        self.g = nn.Linear(channels, self.inner)
        self.out = nn.Linear(self.inner, channels)
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        theta, phi, g = self.theta(x), self.phi(x), self.g(x)
        scores = theta @ phi.transpose(1, 2) / math.sqrt(self.inner)
        attn = torch.softmax(scores, dim=-1)
        return x + self.out(attn @ g)


class RadarClassifier(nn.Module):
    def __init__(self, widths=(32, 64, 128, 128), hidden: int = 128, length: int = 1024,
                 nlb_inner: tuple = (None, None)):
        super().__init__()
        f1, f2, f3, f4 = widths
        self.widths = tuple(widths)
        self.hidden = hidden
        self.conv1a = nn.Conv1d(2, f1, 3, padding=1)
        self.conv1b = nn.Conv1d(f1, f1, 3, padding=1)
        self.nlb1 = NonLocalBlock(f1, nlb_inner[0])
        self.conv2a = nn.Conv1d(f1, f2, 3, padding=1)
        self.conv2b = nn.Conv1d(f2, f2, 3, padding=1)
        self.nlb2 = NonLocalBlock(f2, nlb_inner[1])
        self.conv3 = nn.Conv1d(f2, f3, 3, padding=1)
        self.conv4 = nn.Conv1d(f3, f4, 3, padding=1)
        self.pool = nn.MaxPool1d(2)
        self.fc1 = nn.Linear((length // 16) * f4, hidden)
        self.fc2 = nn.Linear(hidden, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """(B, 1024, 2) features -> (B,) logits."""
        x = x.transpose(1, 2)  # channels first for conv
        x = torch.relu(self.conv1a(x))
        x = self.pool(torch.relu(self.conv1b(x)))
        x = self.nlb1(x.transpose(1, 2)).transpose(1, 2)
        x = torch.relu(self.conv2a(x))
        x = self.pool(torch.relu(self.conv2b(x)))
        x = self.nlb2(x.transpose(1, 2)).transpose(1, 2)
        x = self.pool(torch.relu(self.conv3(x)))
        x = self.pool(torch.relu(self.conv4(x)))
        # flatten length-major (L, C) to match the inference engine
        flat = x.transpose(1, 2).reshape(x.shape[0], -1)
        hidden = torch.relu(self.fc1(flat))
        return self.fc2(hidden)[:, 0]

    def probabilities(self, x: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.forward(x))
