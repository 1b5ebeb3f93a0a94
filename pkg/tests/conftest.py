import numpy as np
import pytest

from ccihp_eval.maskcore import SEMANTIC_TASKS, LabelMap
from ccihp_eval.samples import ImageSample
from ccihp_eval.taxonomy import default_taxonomy


@pytest.fixture(scope="session")
def tax():
    return default_taxonomy()


def make_sample(image_id="img", instance=None, split="train", **maps):
    """ImageSample from nested lists; missing semantic maps are all background."""
    inst = np.asarray(instance, dtype=np.uint16)
    out = {"instance": LabelMap("instance", inst)}
    for task in SEMANTIC_TASKS:
        data = maps.get(task)
        arr = np.zeros(inst.shape, np.uint8) if data is None else np.asarray(data, dtype=np.uint8)
        out[task] = LabelMap(task, arr)
    return ImageSample(image_id, out, split)


def degraded_dataset(n, seed=0, spec=None, erosion=1, drop=0.2, relabel=0.2):
    """Generator scenes with perturbed predictions whose scores are all distinct."""
    from ccihp_eval.synth import PerturbationSpec, SceneSpec, generate_dataset, perturb
    from ccihp_eval.samples import PredInstance, Prediction

    scenes = generate_dataset(n, seed, spec or SceneSpec())
    rng = np.random.default_rng(seed)
    samples, preds = [], {}
    for i, (sample, pred, _) in enumerate(scenes):
        pspec = PerturbationSpec(mask_erosion=erosion, drop_instance_prob=drop,
                                 relabel_prob={t: relabel for t in SEMANTIC_TASKS}, seed=seed * 7919 + i)
        pred, _ = perturb(pred, pspec)
        scores = rng.permutation(len(pred.instances) or 1)[:len(pred.instances)] / 10 + 0.05
        pred = Prediction(pred.image_id, pred.height, pred.width,
                          tuple(PredInstance(float(s), p.mask) for s, p in zip(scores, pred.instances)),
                          pred.semantic)
        samples.append(sample)
        preds[sample.image_id] = pred
    return samples, preds


def shuffle_prediction(pred, rng):
    from ccihp_eval.samples import Prediction

    order = rng.permutation(len(pred.instances))
    return Prediction(pred.image_id, pred.height, pred.width,
                      tuple(pred.instances[k] for k in order), pred.semantic)


def relabel_instances(sample, rng):
    """Same sample with the GT instance ids permuted."""
    inst = sample["instance"].data
    n = int(inst.max())
    lut = np.concatenate([[0], rng.permutation(n) + 1]).astype(inst.dtype)
    maps = dict(sample.maps)
    maps["instance"] = LabelMap("instance", lut[inst])
    return ImageSample(sample.image_id, maps, sample.split)
