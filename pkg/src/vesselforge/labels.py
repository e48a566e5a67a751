"""Default Circle-of-Willis label vocabulary, aliases, and adjacency."""

from __future__ import annotations

# Default 14-class map: 0 = background, 13 arterial segments.
DEFAULT_LABEL_MAP: dict[int, str] = {
    1: "BA",
    2: "R-PCA",
    3: "L-PCA",
    4: "R-ICA",
    5: "R-MCA",
    6: "L-ICA",
    7: "L-MCA",
    8: "R-Pcom",
    9: "L-Pcom",
    10: "Acom",
    11: "R-ACA",
    12: "L-ACA",
    13: "3rd-A2",
}

# Long-form aliases, lowercased; resolved case-insensitively on top of the
# canonical names themselves.
SEGMENT_ALIASES: dict[str, str] = {
    "basilar artery": "BA",
    "right posterior cerebral artery": "R-PCA",
    "left posterior cerebral artery": "L-PCA",
    "right internal carotid artery": "R-ICA",
    "left internal carotid artery": "L-ICA",
    "right middle cerebral artery": "R-MCA",
    "left middle cerebral artery": "L-MCA",
    "right posterior communicating artery": "R-Pcom",
    "left posterior communicating artery": "L-Pcom",
    "anterior communicating artery": "Acom",
    "right anterior cerebral artery": "R-ACA",
    "left anterior cerebral artery": "L-ACA",
    "third a2": "3rd-A2",
    "3rd a2": "3rd-A2",
}

# Anatomical parent per segment: the proximal endpoint of a segment is the
# endpoint nearest any voxel of its parent's mask. None = no parent known
# (proximal endpoint falls back to the lower-coordinate endpoint).
PARENT_SEGMENT: dict[str, str | None] = {
    "BA": None,
    "R-PCA": "BA",
    "L-PCA": "BA",
    "R-ICA": None,
    "L-ICA": None,
    "R-MCA": "R-ICA",
    "L-MCA": "L-ICA",
    "R-Pcom": "R-ICA",
    "L-Pcom": "L-ICA",
    "Acom": "R-ACA",
    "R-ACA": "R-ICA",
    "L-ACA": "L-ICA",
    "3rd-A2": "Acom",
}


def resolve_segment_name(name: str, label_map: dict[int, str]) -> int | None:
    """Resolve a segment name (canonical or alias, any case) to its class id."""
    wanted = name.strip().lower()
    for cid, canon in label_map.items():
        if canon.lower() == wanted:
            return cid
    alias = SEGMENT_ALIASES.get(wanted)
    if alias is not None:
        for cid, canon in label_map.items():
            if canon == alias:
                return cid
    return None
