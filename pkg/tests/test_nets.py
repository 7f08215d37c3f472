import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from ccreid.errors import ConfigError, ShapeError, StateError
from ccreid.losses import attention_loss, batch_hard_triplet, cross_entropy_sum, total_loss, LossWeights
from ccreid.nets import (NUM_BRANCHES, Backbone, FaceNet, GlobalStream, MultiBranchHead, NetConfig,
                         apply_attention, cam_forward, check_alignment, freeze_teacher, student_forward,
                         teacher_forward)

CFG = NetConfig((64, 32), 10, channels=32, head_channels=64, embed_dim=64)


def test_backbone_shape_and_purity():
    torch.manual_seed(0)
    bb = Backbone(CFG).eval()
    x = torch.rand(2, 3, 64, 32)
    out = bb(x)
    assert out.shape == (2, 32, 16, 8)
    assert torch.equal(out, bb(x))
    with pytest.raises(ShapeError):
        bb(torch.rand(2, 3, 32, 32))


def test_cam_examples():
    f = torch.rand(2, 4, 3, 5)
    assert torch.all(cam_forward(f, torch.zeros(4), torch.zeros(())) == 0.5)
    prev = 0.5
    for b in (1.0, 5.0, 20.0):
        v = float(cam_forward(f, torch.zeros(4), torch.tensor(b)).min())
        assert v >= prev
        prev = v
    assert prev == pytest.approx(1.0, abs=1e-8)
    ones = torch.ones(1, 2, 3, 3, dtype=torch.float64)
    out = cam_forward(ones, torch.tensor([1.0, -1.0], dtype=torch.float64), torch.tensor(0.3, dtype=torch.float64))
    np.testing.assert_allclose(out.numpy(), 1 / (1 + np.exp(-0.3)), rtol=0, atol=1e-15)
    assert out.shape == (1, 1, 3, 3)
    with pytest.raises(ShapeError):
        cam_forward(f, torch.zeros(3), torch.zeros(()))


# |logit| <= 32 here; float64 sigmoid only rounds to exactly 0 or 1 beyond about 37
@given(arrays(np.float64, (1, 3, 2, 2), elements=st.floats(-3, 3)),
       arrays(np.float64, 3, elements=st.floats(-3, 3)), st.floats(-5, 5))
def test_attention_range(f, w, b):
    a = cam_forward(torch.as_tensor(f), torch.as_tensor(w), torch.tensor(b, dtype=torch.float64))
    assert torch.all(a > 0) and torch.all(a < 1)


def test_apply_attention_examples():
    f = torch.rand(2, 3, 4, 5, dtype=torch.float64)
    assert torch.equal(apply_attention(f, torch.ones(2, 1, 4, 5, dtype=torch.float64)), f)
    assert torch.equal(apply_attention(f, torch.full((2, 1, 4, 5), 0.5, dtype=torch.float64)), f / 2)
    with pytest.raises(ShapeError):
        apply_attention(f, torch.ones(2, 1, 4, 4))


@given(arrays(np.float64, (2, 2, 2, 2), elements=st.floats(-10, 10)),
       arrays(np.float64, (2, 1, 2, 2), elements=st.floats(0, 1)))
def test_apply_attention_loop_oracle(f, a):
    got = apply_attention(torch.as_tensor(f), torch.as_tensor(a)).numpy()
    want = np.empty_like(f)
    for n in range(2):
        for c in range(2):
            for i in range(2):
                for j in range(2):
                    want[n, c, i, j] = f[n, c, i, j] * a[n, 0, i, j]
    assert np.array_equal(got, want)


def test_head_shape_contract():
    torch.manual_seed(0)
    head = MultiBranchHead(CFG)
    g = head(torch.rand(3, 32, 16, 8))
    assert len(g.logits) == len(g.features) == NUM_BRANCHES
    assert all(f.shape == (3, 64) for f in g.features)
    assert all(z.shape == (3, 10) for z in g.logits)


def test_head_zero_input_gives_bias_logits():
    torch.manual_seed(0)
    head = MultiBranchHead(CFG)
    g = head(torch.zeros(2, 32, 16, 8))
    assert all(torch.count_nonzero(f) == 0 for f in g.features)
    for z, clf in zip(g.logits, head.classifiers):
        assert torch.equal(z, clf.bias.expand_as(z))


def test_part_branches_by_construction():
    torch.manual_seed(0)
    head = MultiBranchHead(CFG)
    fmap = torch.rand(2, 32, 16, 8)
    fmap[:, :, 8:] = 0
    _, up, low, _, _ = head.pooled(fmap)
    assert torch.count_nonzero(low) == 0
    assert torch.count_nonzero(up) > 0


def test_head_only_sees_attended_map(monkeypatch):
    torch.manual_seed(0)
    model = GlobalStream(NetConfig((16, 8), 3, channels=8, head_channels=8, embed_dim=8)).eval()
    seen = {}
    orig = model.head.forward
    monkeypatch.setattr(model.head, "forward", lambda x: seen.setdefault("x", x) is not None and orig(x))
    images = torch.rand(2, 3, 16, 8)
    model(images)
    fmap = model.backbone(images)
    assert torch.equal(seen["x"], fmap * model.cam(fmap))


def test_gradient_flow_every_group():
    torch.manual_seed(0)
    cfg = NetConfig((16, 8), 3, channels=8, head_channels=8, embed_dim=8)
    model = GlobalStream(cfg)
    images = torch.rand(6, 3, 16, 8)
    y = torch.tensor([0, 0, 1, 1, 2, 2])
    groups, att = model(images)
    parts = {"att": attention_loss(att, torch.full_like(att, 0.1)),
             "trip": batch_hard_triplet(groups.features, y, 0.3), "ce_g": cross_entropy_sum(groups.logits, y)}
    total_loss(parts, LossWeights()).backward()
    for group in (model.backbone, model.cam, model.head):
        assert any(p.grad is not None and p.grad.abs().max() > 1e-12 for p in group.parameters())


# --------------------------------------------------------------------------- face nets


def face_cfg():
    return NetConfig((16, 16), 10, channels=8, head_channels=8, embed_dim=8)


def test_face_shape_and_eval_purity():
    torch.manual_seed(0)
    t = FaceNet(face_cfg(), "teacher").eval()
    s = FaceNet(face_cfg(), "student").eval()
    x = torch.rand(2, 3, 16, 16)
    g = teacher_forward(t, x)
    assert len(g.logits) == 4 and all(z.shape == (2, 10) for z in g.logits)
    assert len(student_forward(s, x).logits) == len(g.logits)
    assert torch.equal(student_forward(s, x).concat_features(), student_forward(s, x).concat_features())
    with pytest.raises(ShapeError):
        t(torch.rand(2, 3, 8, 8))
    with pytest.raises(ConfigError):
        FaceNet(face_cfg(), "assistant")


def test_freeze_contract():
    torch.manual_seed(0)
    t = FaceNet(face_cfg(), "teacher")
    with pytest.raises(StateError):
        freeze_teacher(t)
    t.trained = True
    freeze_teacher(t)
    assert t.frozen and not t.training
    assert all(not p.requires_grad for p in t.parameters())
    before = [p.clone() for p in t.parameters()]
    x = torch.rand(4, 3, 16, 16)
    out = teacher_forward(t, x)
    assert not out.logits[0].requires_grad
    s = FaceNet(face_cfg(), "student")
    opt = torch.optim.SGD(list(s.parameters()) + list(t.parameters()), lr=1.0, weight_decay=0.1)
    for _ in range(3):
        loss = sum(z.sum() for z in student_forward(s, x).logits)
        opt.zero_grad()
        loss.backward()
        opt.step()
    assert all(torch.equal(a, b) for a, b in zip(before, t.parameters()))
    assert all(p.grad is None for p in t.parameters())


def test_alignment_check():
    torch.manual_seed(0)
    t = FaceNet(face_cfg(), "teacher")
    check_alignment(t, FaceNet(face_cfg(), "student"))
    with pytest.raises(ConfigError):
        check_alignment(t, FaceNet(NetConfig((16, 16), 9, channels=8, head_channels=8, embed_dim=8), "student"))


def test_netconfig_validation():
    with pytest.raises(ConfigError):
        NetConfig((15, 8), 3).validate()
    with pytest.raises(ConfigError):
        NetConfig((16, 8), 3, embed_dim=7).validate()
