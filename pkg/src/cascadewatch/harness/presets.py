"""Named backend profiles.

``mixed-traffic`` is calibrated so that, under the default thresholds, normal
frames exit at Stage I / II / III with probabilities 0.713 / 0.186 / 0.101:

* Stage I confidence ~ Beta(a1, 1): P(conf >= 0.45) = 1 - 0.45**a1 = 0.713
* Stage II error ~ 0.003 * Beta(a2, 1): P(err >= 1.5e-3) = 1 - 0.5**a2 = 0.186 / 0.287
"""

from __future__ import annotations

import copy

DETECTOR_BETA_A = 1.5633
RECON_BETA_A = 1.5067
RECON_SCALE = 0.003

_DEFAULT = {
    "detector": {
        "latency": 0.034,
        "classes": {
            "normal": {"confidence": {"uniform": [0.6, 0.98]}, "label": "benign"},
            "obstruction": {"confidence": {"fixed": 0.92}, "label": "obstructed_view"},
            "noise_burst": {"confidence": {"uniform": [0.05, 0.35]}, "label": "benign"},
            "frozen": {"confidence": {"uniform": [0.05, 0.35]}, "label": "benign"},
            "loiter_alarm": {"confidence": {"uniform": [0.5, 0.8]}, "label": "person_detected"},
            "default": {"confidence": {"uniform": [0.0, 0.4]}, "label": "benign"},
        },
    },
    "reconstruction": {
        "latency": 0.062,
        "factor": 4,
        "classes": {
            "normal": {"error": "proxy", "label": "illumination_shift"},
            "obstruction": {"error": "proxy", "label": "illumination_shift"},
            "noise_burst": {"error": "proxy", "label": "illumination_shift"},
            "frozen": {"error": {"uniform": [0.002, 0.004]}, "label": "frozen_stream"},
            "loiter_alarm": {"error": "proxy", "label": "illumination_shift"},
            "default": {"error": "proxy", "label": "illumination_shift"},
        },
    },
    "semantic": {
        "latency": 1.82,
        "classes": {
            "normal": {"descriptions": [
                "routine pedestrian traffic",
                "empty platform under normal lighting",
                "commuters walking through the concourse",
            ]},
            "obstruction": {"descriptions": ["obscured lens", "hand covering lens"]},
            "noise_burst": {"descriptions": ["heavy static noise across the image"]},
            "frozen": {"descriptions": ["scene appears unchanged for several seconds"]},
            "loiter_alarm": {"descriptions": ["individual loitering near restricted gate"]},
            "default": {"descriptions": ["unidentified activity in view"]},
        },
    },
}

_OVERRIDES = {
    "default": {},
    "case-study": {
        "detector": {"classes": {
            "normal": {"confidence": {"uniform": [0.9, 0.99]}, "label": "benign"},
        }},
        "reconstruction": {"classes": {
            "obstruction": {"error": {"fixed": 0.18}, "label": "illumination_shift"},
        }},
    },
    "mixed-traffic": {
        "detector": {"classes": {
            "normal": {"confidence": {"beta": [DETECTOR_BETA_A, 1.0]}, "label": "benign"},
        }},
        "reconstruction": {"classes": {
            "normal": {"error": {"beta": [RECON_BETA_A, 1.0], "scale": RECON_SCALE},
                       "label": "illumination_shift"},
        }},
    },
}

PROFILE_PRESETS = tuple(_OVERRIDES)


def merge_profiles(base: dict, override: dict) -> dict:
    """Overlay ``override`` on ``base`` stage by stage, class by class."""
    out = copy.deepcopy(base)
    for stage, spec in override.items():
        if stage == "preset":
            continue
        dst = out.setdefault(stage, {})
        for key, value in spec.items():
            if key == "classes":
                dst.setdefault("classes", {}).update(copy.deepcopy(value))
            else:
                dst[key] = copy.deepcopy(value)
    return out


def profile_preset(name: str) -> dict:
    if name not in _OVERRIDES:
        raise KeyError(name)
    return merge_profiles(_DEFAULT, _OVERRIDES[name])
