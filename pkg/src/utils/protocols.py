"""Constants and utilities related to experiment protocols."""

from data.models import Protocol
from harness.manifest import keep_all, soft_excluded, soft_in_test_only, soft_in_train_and_test

# Define protocol configuration - single source of truth
PROTOCOL_CONFIG = {
    Protocol.STANDARD: {
        "display_name": "Standard",
        "record_filter": keep_all,
        "description": "All records, one fusion strategy",
        "order": 0,
    },
    Protocol.SOFT_LENS_1: {
        "display_name": "Soft Lens 1",
        "record_filter": soft_in_train_and_test,
        "description": "Soft lenses as bona fide in training and testing",
        "order": 1,
    },
    Protocol.SOFT_LENS_2: {
        "display_name": "Soft Lens 2",
        "record_filter": soft_in_test_only,
        "description": "Soft lenses only in testing",
        "order": 2,
    },
    Protocol.SOFT_LENS_3: {
        "display_name": "Soft Lens 3",
        "record_filter": soft_excluded,
        "description": "Soft lenses removed everywhere",
        "order": 3,
    },
    Protocol.STRIPE_ABLATION: {
        "display_name": "Stripe Ablation",
        "record_filter": keep_all,
        "description": "One run per stripe height",
        "order": 4,
    },
    Protocol.FUSION_COMPARE: {
        "display_name": "Fusion Compare",
        "record_filter": keep_all,
        "description": "Majority vote, mean score and resize baseline on one model",
        "order": 5,
    },
    Protocol.RING_ANALYSIS: {
        "display_name": "Ring Analysis",
        "record_filter": keep_all,
        "description": "Per-ring EER profile next to the standard run",
        "order": 6,
    },
}

# (display name, value) pairs in menu order
PROTOCOL_ORDER = [(config["display_name"], key.value) for key, config in sorted(PROTOCOL_CONFIG.items(), key=lambda x: x[1]["order"])]


def get_record_filter(protocol: Protocol):
    return PROTOCOL_CONFIG[Protocol(protocol)]["record_filter"]


def get_display_name(protocol: Protocol) -> str:
    return PROTOCOL_CONFIG[Protocol(protocol)]["display_name"]
