"""Prediction network (one GRU layer over token embeddings) and the joint network."""
from __future__ import annotations

import numpy as np

from ..numerics import autodiff as ad
from ..numerics.autodiff import Parameter, Tensor
from ..numerics.autodiff import _sigmoid as sigmoid


def init_predictor_params(vocab_total: int, embed_dim: int, pred_dim: int,
                          rng: np.random.Generator) -> dict:
    b = 1.0 / np.sqrt(pred_dim)
    return {
        "pred.embed": Parameter(rng.normal(0.0, 1.0, (vocab_total, embed_dim)), "pred.embed"),
        "pred.wx": Parameter(rng.uniform(-b, b, (embed_dim, 3 * pred_dim)), "pred.wx"),
        "pred.wh": Parameter(rng.uniform(-b, b, (pred_dim, 3 * pred_dim)), "pred.wh"),
        "pred.bx": Parameter(np.zeros(3 * pred_dim), "pred.bx"),
        "pred.bh": Parameter(np.zeros(3 * pred_dim), "pred.bh"),
    }


def init_joint_params(enc_dim: int, pred_dim: int, joint_dim: int, vocab_total: int,
                      rng: np.random.Generator) -> dict:
    return {
        "joint.we": Parameter(rng.uniform(-1, 1, (enc_dim, joint_dim)) / np.sqrt(enc_dim), "joint.we"),
        "joint.wp": Parameter(rng.uniform(-1, 1, (pred_dim, joint_dim)) / np.sqrt(pred_dim), "joint.wp"),
        "joint.b": Parameter(np.zeros(joint_dim), "joint.b"),
        "joint.wo": Parameter(rng.uniform(-1, 1, (joint_dim, vocab_total)) / np.sqrt(joint_dim), "joint.wo"),
    }


def predict_step(state: np.ndarray, token: int, params: dict, blank_id: int = 0):
    """One GRU update; returns ``(new_state, g_u)`` where ``g_u`` is the new state.

    Blank never feeds the prediction network.
    """
    if token == blank_id:
        raise ValueError("blank does not update the prediction network")
    x = params["pred.embed"].data[token]
    dp = state.shape[-1]
    gx = x @ params["pred.wx"].data + params["pred.bx"].data
    gh = state @ params["pred.wh"].data + params["pred.bh"].data
    r = sigmoid(gx[:dp] + gh[:dp])
    z = sigmoid(gx[dp:2 * dp] + gh[dp:2 * dp])
    n = np.tanh(gx[2 * dp:] + r * gh[2 * dp:])
    new = (1.0 - z) * n + z * state
    return new, new


def predict_sequence(tokens: np.ndarray, params: dict, pred_dim: int) -> Tensor:
    """Teacher-forced outputs [B, U+1, pred_dim] for padded targets [B, U].

    Row ``u`` is the output after consuming the first ``u`` tokens (row 0 is the
    zero start state).
    """
    tokens = np.asarray(tokens, dtype=np.int64)
    B, U = tokens.shape
    h = ad.Tensor(np.zeros((B, pred_dim)))
    outs = [h]
    dp = pred_dim
    for u in range(U):
        x = ad.embedding(params["pred.embed"], tokens[:, u])
        gx = ad.linear(x, params["pred.wx"], params["pred.bx"])
        gh = ad.linear(h, params["pred.wh"], params["pred.bh"])
        r = ad.sigmoid(gx[:, :dp] + gh[:, :dp])
        z = ad.sigmoid(gx[:, dp:2 * dp] + gh[:, dp:2 * dp])
        n = ad.tanh(gx[:, 2 * dp:] + r * gh[:, 2 * dp:])
        h = (1.0 - z) * n + z * h
        outs.append(h)
    return ad.stack(outs, axis=1)


def joint_logits(h, g, params: dict) -> np.ndarray:
    """``W_o tanh(W_e h + W_p g + b)`` for single vectors or broadcastable stacks."""
    pre = (np.asarray(h) @ params["joint.we"].data + np.asarray(g) @ params["joint.wp"].data
           + params["joint.b"].data)
    return np.tanh(pre) @ params["joint.wo"].data


def joint_train(enc: Tensor, pred: Tensor, params: dict) -> Tensor:
    """Lattice logits [B, T, U+1, V] from encoder [B, T, d] and predictor [B, U+1, dp]."""
    eh = ad.linear(enc, params["joint.we"], params["joint.b"])
    pg = ad.matmul(pred, params["joint.wp"])
    B, T, J = eh.shape
    U1 = pg.shape[1]
    z = ad.tanh(ad.reshape(eh, (B, T, 1, J)) + ad.reshape(pg, (B, 1, U1, J)))
    return ad.matmul(z, params["joint.wo"])
