"""Pure-numpy GRU recurrence kernels.

Both kernels work time-major: ``xw`` is ``(L, N, 3H)`` holding the input
projections ``x @ [Wz|Wr|Wh] + [bz|br|bh]`` for every step, ``u`` is the packed
recurrent matrix ``[Uz|Ur|Uh]`` of shape ``(H, 3H)``.
"""
import numpy as np


def _sigmoid(a):
    return 0.5 * (np.tanh(0.5 * a) + 1.0)


def gru_scan(xw, u, h0):
    """Run the recurrence forward and keep what the backward sweep needs.

    Returns ``(hs, z, r, hc)``, each ``(L, N, H)``.
    """
    L, N, H3 = xw.shape
    H = H3 // 3
    hs = np.empty((L, N, H))
    zs = np.empty((L, N, H))
    rs = np.empty((L, N, H))
    hcs = np.empty((L, N, H))
    uzr = u[:, : 2 * H]
    uh = u[:, 2 * H :]
    h = h0
    for t in range(L):
        a = xw[t, :, : 2 * H] + h @ uzr
        z = _sigmoid(a[:, :H])
        r = _sigmoid(a[:, H:])
        hc = np.tanh(xw[t, :, 2 * H :] + (r * h) @ uh)
        h = h + z * (hc - h)
        hs[t] = h
        zs[t] = z
        rs[t] = r
        hcs[t] = hc
    return hs, zs, rs, hcs


def gru_scan_backward(dhs, u, h0, hs, zs, rs, hcs):
    """Reverse sweep. Returns ``(dxw, du, dh0)``."""
    L, N, H = hs.shape
    dxw = np.empty((L, N, 3 * H))
    du = np.zeros_like(u)
    uzr_t = u[:, : 2 * H].T
    uh_t = u[:, 2 * H :].T
    dh = np.zeros((N, H))
    for t in range(L - 1, -1, -1):
        hprev = hs[t - 1] if t > 0 else h0
        z, r, hc = zs[t], rs[t], hcs[t]
        dh = dh + dhs[t]
        dah = dh * z * (1.0 - hc * hc)
        daz = dh * (hc - hprev) * z * (1.0 - z)
        rh = r * hprev
        drh = dah @ uh_t
        dar = drh * hprev * r * (1.0 - r)
        dxw[t, :, :H] = daz
        dxw[t, :, H : 2 * H] = dar
        dxw[t, :, 2 * H :] = dah
        du[:, 2 * H :] += rh.T @ dah
        du[:, : 2 * H] += hprev.T @ dxw[t, :, : 2 * H]
        dh = dh * (1.0 - z) + drh * r + dxw[t, :, : 2 * H] @ uzr_t
    return dxw, du, dh
