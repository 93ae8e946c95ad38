import numpy as np
import pytest
import torch

from ddmodem.channel import ChannelSpec, generate_dataset
from ddmodem.errors import ArchMismatchError, FormatError
from ddmodem.network import ModNetArch, init_modnet, load_params, modnet_forward, save_params
from ddmodem.training import rate_loss, rates_torch


@pytest.fixture
def tiny():
    spec = ChannelSpec.with_speed_kmh(360, num_subcarriers=8, prefix_len=2, num_paths=3, max_delay_grid=2)
    return ModNetArch(8, 2), generate_dataset(spec, 12, 0)


def test_output_count():
    assert ModNetArch(128, 24).output_count == 77_824
    assert ModNetArch(32, 8).output_count == 5_120


def test_default_widths():
    arch = ModNetArch(32, 8)
    assert arch.fc_widths == (160, 160, 5120)
    assert arch.conv_kernel == 7 and arch.conv_layers == 3


def test_conv_input_widths_are_dense():
    net = init_modnet(ModNetArch(8, 2), 0)
    assert [c.in_channels for c in net.convs] == [2, 18, 34]
    assert net.fc[0].in_features == 16 * 10 * 10


def test_init_deterministic(tiny):
    arch, _ = tiny
    a, b = init_modnet(arch, 3), init_modnet(arch, 3)
    for (na, ta), (nb, tb) in zip(a.state_dict().items(), b.state_dict().items()):
        assert na == nb
        assert torch.equal(ta, tb)
    c = init_modnet(arch, 4)
    assert not torch.equal(a.fc[0].weight, c.fc[0].weight)


def test_batchnorm_init(tiny):
    net = init_modnet(tiny[0], 0)
    for bn in net.norms:
        assert torch.all(bn.weight == 1) and torch.all(bn.bias == 0)


def test_forward_energy_invariants(tiny):
    arch, ds = tiny
    net = init_modnet(arch, 1)
    for H in ds.matrices()[:4]:
        m = modnet_forward(net, H)
        assert m.mod.shape == (10, 8) and m.demod.shape == (8, 10)
        e_mod, e_demod = m.energies()
        assert e_mod == pytest.approx(10, abs=1e-4)
        assert e_demod == pytest.approx(8, abs=1e-4)
    mod, demod = net(torch.from_numpy(ds.matrices().astype(np.complex64)))
    e = (mod.abs() ** 2).sum((-2, -1))
    torch.testing.assert_close(e, torch.full_like(e, 10.0), atol=1e-4, rtol=0)


def test_inference_deterministic_and_input_dependent(tiny):
    arch, ds = tiny
    net = init_modnet(arch, 2)
    H = ds.matrices()
    a = modnet_forward(net, H[0])
    b = modnet_forward(net, H[0])
    np.testing.assert_array_equal(a.mod, b.mod)
    c = modnet_forward(net, H[1])
    assert np.max(np.abs(a.mod - c.mod)) > 1e-6


def test_dense_wiring(tiny):
    arch, ds = tiny
    net = init_modnet(arch, 0).eval()
    x = torch.from_numpy(ds.matrices()[:2].astype(np.complex64))
    x = torch.stack([x.real, x.imag], 1)
    with torch.no_grad():
        normal = net.features(x)
        handle = net.convs[0].register_forward_hook(lambda mod, inp, out: torch.zeros_like(out))
        ablated = net.features(x)
        handle.remove()
    # third conv layer input = [x (2) | layer-1 output (16) | layer-2 output (16)]
    third_normal, third_ablated = normal[2], ablated[2]
    assert third_normal.shape[1] == 34
    torch.testing.assert_close(third_normal[:, :2], third_ablated[:, :2])
    assert not torch.allclose(third_normal[:, 2:18], third_ablated[:, 2:18])


def test_every_parameter_gets_gradient(tiny):
    arch, ds = tiny
    net = init_modnet(arch, 0).train()
    H = torch.from_numpy(ds.matrices().astype(np.complex64))
    mod, demod = net(H)
    rate_loss(rates_torch(mod, demod, H, 0.01)).mean().backward()
    for name, p in net.named_parameters():
        assert p.grad is not None and torch.any(p.grad != 0), name


def test_params_roundtrip(tmp_path, tiny):
    arch, ds = tiny
    net = init_modnet(arch, 5)
    # populate running statistics
    net.train()
    net(torch.from_numpy(ds.matrices().astype(np.complex64)))
    path = tmp_path / "p.mnet"
    save_params(net, path, {"config_hash": "x1"})
    back, meta = load_params(path, expect=arch)
    assert meta["config_hash"] == "x1"
    assert back.init_seed == 5
    for H in ds.matrices()[:3]:
        a, b = modnet_forward(net, H), modnet_forward(back, H)
        np.testing.assert_array_equal(a.mod, b.mod)
        np.testing.assert_array_equal(a.demod, b.demod)


def test_params_arch_mismatch(tmp_path, tiny):
    path = tmp_path / "p.mnet"
    save_params(init_modnet(tiny[0], 0), path)
    with pytest.raises(ArchMismatchError):
        load_params(path, expect=ModNetArch(16, 2))


def test_params_truncated(tmp_path, tiny):
    path = tmp_path / "p.mnet"
    save_params(init_modnet(tiny[0], 0), path)
    path.write_bytes(path.read_bytes()[:-1000])
    with pytest.raises(FormatError):
        load_params(path)


def test_params_bad_magic(tmp_path):
    path = tmp_path / "p.mnet"
    path.write_bytes(b"XXXX" + bytes(64))
    with pytest.raises(FormatError):
        load_params(path)
