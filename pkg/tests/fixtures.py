"""Shared fixtures: a manifest shaped like the clinical cohort's split table.

Epileptic: 42 patients, 623 files (32 training patients with 451 files and
10 test patients with 172). Non-epileptic: 100 patients, 288 files (80 with
224 and 20 with 64).
"""

from iedkit.datapipe import Manifest, ManifestEntry

EPILEPTIC_FILES = [14] * 29 + [15] * 3 + [17] * 8 + [18] * 2
NON_EPILEPTIC_FILES = [3] * 64 + [2] * 16 + [4] * 4 + [3] * 16

# Per-class test fractions that select 10 of 42 and 20 of 100 patients.
TABLE_FRACTIONS = {"epileptic": 10 / 42, "non_epileptic": 20 / 100}


def table_manifest():
    entries = []
    for label, prefix, counts in (("epileptic", "E", EPILEPTIC_FILES),
                                  ("non_epileptic", "N", NON_EPILEPTIC_FILES)):
        for p, n in enumerate(counts):
            pid = f"{prefix}{p:03d}"
            entries += [ManifestEntry(pid, f"{pid}/s{k:02d}.edf", label) for k in range(n)]
    return Manifest(entries)


def table_training_entries(manifest):
    """Files of the patients in the table's training row (451 + 224)."""
    train_patients = {f"E{p:03d}" for p in range(32)} | {f"N{p:03d}" for p in range(80)}
    return [e for e in manifest if e.patient_id in train_patients]


# Published confusion counts (tn, fp, fn, tp) and the rates that follow from them.
TABLE4 = {
    "residual_cnn": (58, 6, 11, 161),
    "bilstm": (59, 5, 14, 158),
    "ensemble": (58, 6, 6, 166),
}
# accuracy, sensitivity, specificity, f1 as printed to four decimals
TABLE3 = {
    "residual_cnn": (0.9280, 0.9360, 0.9062, 0.9499),
    "bilstm": (0.9195, 0.9186, 0.9219, 0.9433),
    "ensemble": (0.9492, 0.9651, 0.9062, 0.9651),
}


def predictions_for(tn, fp, fn, tp):
    """Labels and probabilities that reproduce the given confusion counts at 0.5."""
    labels = [0] * (tn + fp) + [1] * (fn + tp)
    probs = [0.1] * tn + [0.9] * fp + [0.2] * fn + [0.8] * tp
    return labels, probs
