"""Subject-level train/test selection and k-fold cross-validation plans.

Every class present in the dataset must appear in the training and the test subjects, and in the training part of
every fold. Among seeded candidate fold assignments the one whose validation folds hold the most subjects of every
class is kept, so a class annotated in exactly k training subjects lands in a different fold each time; ties go to
the most even per-class subject and image counts across validation folds.
"""
import numpy as np
from dataclasses import dataclass, field
from loguru import logger

from spectraseg import errors
from spectraseg import utils as sps_utils
from spectraseg.keywords import ConfigKW, SplitDatasetKW
from spectraseg.loader.datacube import IGNORE, read_labels


def subject_class_images(index):
    """Per subject, the number of its images in which each class is annotated.

    Returns:
        dict: subject id -> int ndarray of length ``index.n_classes``.
    """
    counts = {}
    for subject, records in index.subjects.items():
        per_class = np.zeros(index.n_classes, dtype=np.int64)
        for rec in records:
            labels = read_labels(rec.label).labels
            present = np.unique(labels[labels != IGNORE])
            per_class[present[present < index.n_classes]] += 1
        counts[subject] = per_class
    return counts


def _subject_matrix(counts, subjects):
    return np.stack([counts[s] > 0 for s in subjects]) if subjects else np.zeros((0, 0), dtype=bool)


def _uncovered(counts, subjects, classes):
    present = np.zeros(len(classes), dtype=bool) if not subjects else \
        _subject_matrix(counts, subjects)[:, classes].any(axis=0)
    return [c for c, ok in zip(classes, present) if not ok]


@dataclass
class Fold:
    """Training subjects of one fold and the subjects validated on (V_unknown)."""
    train_subjects: list
    val_subjects: list


@dataclass
class SplitPlan:
    """Test subjects, cross-validation folds and the images held out of training (V_known).

    Attributes:
        train_subjects (list): Subjects available for training, split into ``folds``.
        test_subjects (list): Subjects never seen during training.
        folds (list): :class:`Fold` per cross-validation fold.
        held_out (dict): training subject -> id of its image excluded from training and validated on.
        seed (int): Seed the plan was drawn with.
    """
    train_subjects: list
    test_subjects: list
    folds: list
    held_out: dict = field(default_factory=dict)
    seed: int = 0

    @property
    def k(self):
        return len(self.folds)

    def fold_images(self, index, fold):
        """Image records of one fold.

        Returns:
            dict: ``train``, ``unknown`` (validation subjects) and ``known`` (held-out images of training
            subjects) record lists.
        """
        f = self.folds[fold]
        held = set(self.held_out.values())
        train = [rec for rec in index.images(f.train_subjects) if rec.image_id not in held]
        known = [rec for rec in index.images(f.train_subjects) if rec.image_id in held]
        return {"train": train, "unknown": index.images(f.val_subjects), "known": known}

    def full_training_images(self, index):
        """Every image of the training subjects, for runs trained without folds."""
        return index.images(self.train_subjects)

    def check_leakage(self, index):
        """Raise :class:`LeakageError` if a training image of any fold is also validated or tested on."""
        overlap = set(self.train_subjects) & set(self.test_subjects)
        if overlap:
            raise errors.LeakageError(f"Subjects {sorted(overlap)} are both training and test subjects")
        test_ids = {rec.image_id for rec in index.images(self.test_subjects)}
        for i in range(self.k):
            images = self.fold_images(index, i)
            train_ids = {rec.image_id for rec in images["train"]}
            for name in ("unknown", "known"):
                shared = train_ids & {rec.image_id for rec in images[name]}
                if shared:
                    raise errors.LeakageError(f"Fold {i}: images {sorted(shared)} are in training and V_{name}")
            if train_ids & test_ids:
                raise errors.LeakageError(f"Fold {i}: images {sorted(train_ids & test_ids)} are in training and test")
            if set(self.folds[i].train_subjects) & set(self.folds[i].val_subjects):
                raise errors.LeakageError(f"Fold {i}: a validation subject is also a training subject")

    def to_json(self):
        return {"seed": self.seed, "train_subjects": list(self.train_subjects),
                "test_subjects": list(self.test_subjects),
                "folds": [{"train_subjects": list(f.train_subjects), "val_subjects": list(f.val_subjects)}
                          for f in self.folds],
                "held_out": dict(self.held_out)}

    @classmethod
    def from_json(cls, obj):
        return cls(train_subjects=list(obj["train_subjects"]), test_subjects=list(obj["test_subjects"]),
                   folds=[Fold(list(f["train_subjects"]), list(f["val_subjects"])) for f in obj["folds"]],
                   held_out=dict(obj.get("held_out", {})), seed=obj.get("seed", 0))

    def save(self, path):
        sps_utils.save_json(self.to_json(), path)

    @classmethod
    def load(cls, path, index=None):
        plan = cls.from_json(sps_utils.load_json(path))
        if index is not None:
            missing = set(plan.train_subjects + plan.test_subjects) - set(index.subject_ids)
            if missing:
                raise errors.InvalidDataError(f"Split {path} names unknown subjects {sorted(missing)}")
            plan.check_leakage(index)
        return plan


def _check_coverage(counts, subjects, classes, what):
    for c in classes:
        n = int(sum(counts[s][c] > 0 for s in subjects))
        if n < 2:
            raise errors.InfeasibleSplitError(c, f"annotated in {n} {what} subject(s), at least 2 are needed")


def select_test_subjects(counts, subjects, classes, n_test, rng, n_candidates=200):
    """Pick ``n_test`` subjects so that every class occurs in the test and in the remaining subjects.

    Among feasible seeded candidates the one leaving the most training subjects for its rarest class wins.
    """
    if n_test == 0:
        return []
    if n_test >= len(subjects):
        raise ValueError(f"Cannot hold out {n_test} test subjects out of {len(subjects)}")
    _check_coverage(counts, subjects, classes, "dataset")
    best, best_key = None, None
    for _ in range(n_candidates):
        perm = rng.permutation(len(subjects))
        test = sorted(subjects[i] for i in perm[:n_test])
        train = [s for s in subjects if s not in test]
        if _uncovered(counts, test, classes) or _uncovered(counts, train, classes):
            continue
        key = int(_subject_matrix(counts, train)[:, classes].sum(axis=0).min())
        if best_key is None or key > best_key:
            best, best_key = test, key
    if best is None:
        rare = min(classes, key=lambda c: sum(counts[s][c] > 0 for s in subjects))
        raise errors.InfeasibleSplitError(rare, f"no sampled test selection of {n_test} subjects covers every class "
                                                f"in both training and test subjects")
    return best


def fold_homogeneity(counts, groups, classes):
    """Summed variance across validation folds of the per-class subject counts, then of the image counts."""
    subj = np.array([[sum(counts[s][c] > 0 for s in g) for c in classes] for g in groups], dtype=np.float64)
    imgs = np.array([[sum(counts[s][c] for s in g) for c in classes] for g in groups], dtype=np.float64)
    return float(subj.var(axis=0).sum()), float(imgs.var(axis=0).sum())


def coverage(counts, groups, classes):
    """Fewest subjects any validation group holds of any class."""
    return int(min(sum(counts[s][c] > 0 for s in g) for g in groups for c in classes))


def _random_groups(subjects, k, rng):
    perm = rng.permutation(len(subjects))
    return [sorted(subjects[i] for i in part) for part in np.array_split(perm, k)]


def _spread_groups(counts, subjects, classes, k, rng):
    """Seeded near-equal groups built greedily, rarest classes first.

    Subjects are visited by the frequency of their rarest class; each joins the open group holding the fewest
    subjects of its classes, compared from the rarest class on.
    """
    n_with = {c: int(sum(counts[s][c] > 0 for s in subjects)) for c in classes}
    sizes = [len(part) for part in np.array_split(np.arange(len(subjects)), k)]
    capacity = [sizes[i] for i in rng.permutation(k)]
    order = [subjects[i] for i in rng.permutation(len(subjects))]
    order.sort(key=lambda s: tuple(sorted(n_with[c] for c in classes if counts[s][c] > 0)))
    by_rarity = sorted(range(len(classes)), key=lambda j: n_with[classes[j]])
    groups = [[] for _ in range(k)]
    cover = np.zeros((k, len(classes)), dtype=np.int64)
    for s in order:
        present = np.array([counts[s][c] > 0 for c in classes], dtype=np.int64)
        cols = [j for j in by_rarity if present[j]]
        g = min((g for g in range(k) if len(groups[g]) < capacity[g]),
                key=lambda g: (tuple(cover[g, cols]), len(groups[g])))
        groups[g].append(s)
        cover[g] += present
    return [sorted(g) for g in groups]


def assign_folds(counts, subjects, classes, k, rng, n_candidates=200):
    """Split ``subjects`` into ``k`` validation groups whose complements all cover ``classes``.

    Candidates alternate between greedy class-spreading groups and random near-equal groups. The feasible
    candidate whose validation groups hold the most subjects of every class wins, ties going to the most
    homogeneous one.
    """
    if k < 2:
        raise ValueError(f"Cross-validation needs at least 2 folds, got {k}")
    if k > len(subjects):
        raise ValueError(f"Cannot build {k} folds from {len(subjects)} training subjects")
    _check_coverage(counts, subjects, classes, "training")
    best, best_key = None, None
    for i in range(max(n_candidates, 1)):
        if i % 2 == 0:
            groups = _spread_groups(counts, subjects, classes, k, rng)
        else:
            groups = _random_groups(subjects, k, rng)
        if any(_uncovered(counts, [s for s in subjects if s not in g], classes) for g in groups):
            continue
        key = (-coverage(counts, groups, classes), *fold_homogeneity(counts, groups, classes))
        if best_key is None or key < best_key:
            best, best_key = groups, key
    if best is None:
        rare = min(classes, key=lambda c: sum(counts[s][c] > 0 for s in subjects))
        raise errors.InfeasibleSplitError(rare, f"no sampled {k}-fold assignment keeps every class in each fold's "
                                                f"training subjects")
    return best


def hold_out_images(index, subjects, rng):
    """One random image per subject, excluded from training and used as V_known.

    Subjects with a single image keep it for training.
    """
    held = {}
    for s in subjects:
        records = index.subjects[s]
        if len(records) < 2:
            logger.warning(f"Subject {s} has a single image; nothing held out for V_known.")
            continue
        held[s] = records[int(rng.integers(len(records)))].image_id
    return held


def make_splits(index, k=5, n_test=2, seed=6, n_candidates=200, test_subjects=None):
    """Draw the test subjects, the k folds and the V_known images.

    Args:
        index (DatasetIndex): Dataset.
        k (int): Number of folds.
        n_test (int): Test subjects to select when ``test_subjects`` is None.
        seed (int): Seed of every random choice.
        n_candidates (int): Candidate selections sampled per step.
        test_subjects (list): Fixed test subjects.

    Returns:
        SplitPlan

    Raises:
        InfeasibleSplitError: a class cannot be covered; the class is named.
    """
    counts = subject_class_images(index)
    subjects = index.subject_ids
    classes = [c for c in range(index.n_classes) if any(counts[s][c] for s in subjects)]
    rng = np.random.default_rng(seed)
    if test_subjects is None:
        test_subjects = select_test_subjects(counts, subjects, classes, n_test, rng, n_candidates)
    else:
        unknown = set(test_subjects) - set(subjects)
        if unknown:
            raise errors.EmptySelectionError(f"Unknown test subjects {sorted(unknown)}")
        rest = [s for s in subjects if s not in test_subjects]
        for part, name in ((list(test_subjects), "test"), (rest, "training")):
            missing = _uncovered(counts, part, classes)
            if missing:
                raise errors.InfeasibleSplitError(missing[0], f"class {missing[0]} is absent from the fixed {name} "
                                                              f"subjects")
    train_subjects = [s for s in subjects if s not in test_subjects]
    groups = assign_folds(counts, train_subjects, classes, k, rng, n_candidates)
    folds = [Fold([s for s in train_subjects if s not in g], g) for g in groups]
    plan = SplitPlan(train_subjects, list(test_subjects), folds, hold_out_images(index, train_subjects, rng), seed)
    plan.check_leakage(index)
    logger.info(f"Split: {len(train_subjects)} training subjects in {k} folds "
                f"{[len(f.val_subjects) for f in folds]}, test subjects {plan.test_subjects}")
    return plan


def split_from_context(context, index):
    """Load the split named by ``dataset.path_split`` or draw one with the ``split_dataset`` parameters."""
    path_split = context[ConfigKW.DATASET].get("path_split")
    if path_split:
        logger.info(f"Loading split from {path_split}")
        return SplitPlan.load(path_split, index)
    params = context[ConfigKW.SPLIT_DATASET]
    return make_splits(index, k=params[SplitDatasetKW.K_FOLDS], n_test=params[SplitDatasetKW.N_TEST],
                       seed=params[SplitDatasetKW.RANDOM_SEED], n_candidates=params[SplitDatasetKW.N_CANDIDATES])
