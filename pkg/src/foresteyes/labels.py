"""Canonical class labels used across ground truth, answers, and reports."""

FOREST = "Forest"
NON_FOREST = "NonForest"
UNDEFINED = "Undefined"
SMALL = "Small"

#: Binary ground-truth alphabet.
GT_BINARY = (FOREST, NON_FOREST)

#: Segment-level ground-truth alphabet (GT-U may emit Undefined).
GT_CLASSES = (FOREST, NON_FOREST, UNDEFINED)

#: Classic three-option answer alphabet.
ANSWER_CLASSES_3 = (FOREST, NON_FOREST, UNDEFINED)

#: Extended alphabet for campaigns offering the too-small option.
ANSWER_CLASSES_4 = (FOREST, NON_FOREST, UNDEFINED, SMALL)

VOLUNTEER_KINDS = ("registered", "anonymous")

DIFFICULTY_EASY = "Easy"
DIFFICULTY_MEDIUM = "Medium"
DIFFICULTY_HARD = "Hard"
DIFFICULTY_LEVELS = (DIFFICULTY_EASY, DIFFICULTY_MEDIUM, DIFFICULTY_HARD)
