"""Toy-scale ablations of the fitting pipeline on the shared 20-identity prior (slow)."""
from dataclasses import replace

import pytest

from avatarsplat.pipelines import FitConfig, evaluate, fit

pytestmark = pytest.mark.slow


def heldout_l1(toy_prior_run, subj, cfg):
    prior, model = toy_prior_run["prior"], toy_prior_run["dataset"].model
    return evaluate(fit(prior, subj["enrollment"], cfg, model), model, subj["heldout"])["mean_l1"]


def test_skipping_inversion_hurts_back_views(toy_prior_run, frontal_subjects):
    model = toy_prior_run["dataset"].model
    worse = 0
    for subj in frontal_subjects:
        full = evaluate(subj["full"], model, subj["heldout"])["mean_l1"]
        worse += heldout_l1(toy_prior_run, subj, replace(FitConfig(), skip_stage1=True)) > full
    assert worse >= 2


def test_prior_regularization_helps_back_views(toy_prior_run, frontal_subjects):
    base = FitConfig()
    better = 0
    for subj in frontal_subjects:
        off = heldout_l1(toy_prior_run, subj, replace(base, weights=replace(base.weights, lambda_prior=0.0)))
        on = heldout_l1(toy_prior_run, subj, replace(base, weights=replace(base.weights, lambda_prior=1.0)))
        better += on < off
    assert better >= 2
