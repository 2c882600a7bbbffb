"""Real spherical-harmonic color basis (degrees 0-3) and its direction Jacobian."""
import numpy as np

C0 = 0.28209479177387814
C1 = 0.4886025119029199
C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
      -1.0925484305920792, 0.5462742152960396)
C3 = (-0.5900435899266435, 2.890611442640554, -0.4570457994644658, 0.3731763325901154,
      -0.4570457994644658, 1.445305721320277, -0.5900435899266435)

# constant added to the SH expansion so that all-zero coefficients give mid-gray
COLOR_OFFSET = 0.5


def n_basis(degree: int) -> int:
    return (degree + 1) ** 2


def basis(dirs: np.ndarray, degree: int):
    """SH basis values (N, nb) and their Jacobian w.r.t. the unit direction (N, nb, 3)."""
    N = len(dirs)
    nb = n_basis(degree)
    Y = np.zeros((N, nb))
    dY = np.zeros((N, nb, 3))
    Y[:, 0] = C0
    if degree == 0:
        return Y, dY
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    one, zero = np.ones(N), np.zeros(N)
    Y[:, 1] = -C1 * y
    Y[:, 2] = C1 * z
    Y[:, 3] = -C1 * x
    dY[:, 1] = np.stack([zero, -C1 * one, zero], 1)
    dY[:, 2] = np.stack([zero, zero, C1 * one], 1)
    dY[:, 3] = np.stack([-C1 * one, zero, zero], 1)
    if degree > 1:
        xx, yy, zz = x * x, y * y, z * z
        Y[:, 4] = C2[0] * x * y
        Y[:, 5] = C2[1] * y * z
        Y[:, 6] = C2[2] * (2 * zz - xx - yy)
        Y[:, 7] = C2[3] * x * z
        Y[:, 8] = C2[4] * (xx - yy)
        dY[:, 4] = C2[0] * np.stack([y, x, zero], 1)
        dY[:, 5] = C2[1] * np.stack([zero, z, y], 1)
        dY[:, 6] = C2[2] * np.stack([-2 * x, -2 * y, 4 * z], 1)
        dY[:, 7] = C2[3] * np.stack([z, zero, x], 1)
        dY[:, 8] = C2[4] * np.stack([2 * x, -2 * y, zero], 1)
        if degree > 2:
            Y[:, 9] = C3[0] * y * (3 * xx - yy)
            Y[:, 10] = C3[1] * x * y * z
            Y[:, 11] = C3[2] * y * (4 * zz - xx - yy)
            Y[:, 12] = C3[3] * z * (2 * zz - 3 * xx - 3 * yy)
            Y[:, 13] = C3[4] * x * (4 * zz - xx - yy)
            Y[:, 14] = C3[5] * z * (xx - yy)
            Y[:, 15] = C3[6] * x * (xx - 3 * yy)
            dY[:, 9] = C3[0] * np.stack([6 * x * y, 3 * xx - 3 * yy, zero], 1)
            dY[:, 10] = C3[1] * np.stack([y * z, x * z, x * y], 1)
            dY[:, 11] = C3[2] * np.stack([-2 * x * y, 4 * zz - xx - 3 * yy, 8 * y * z], 1)
            dY[:, 12] = C3[3] * np.stack([-6 * x * z, -6 * y * z, 6 * zz - 3 * xx - 3 * yy], 1)
            dY[:, 13] = C3[4] * np.stack([4 * zz - 3 * xx - yy, -2 * x * y, 8 * x * z], 1)
            dY[:, 14] = C3[5] * np.stack([2 * x * z, -2 * y * z, xx - yy], 1)
            dY[:, 15] = C3[6] * np.stack([3 * xx - 3 * yy, -6 * x * y, zero], 1)
    return Y, dY


def rgb_to_dc(rgb) -> np.ndarray:
    """Degree-0 coefficient giving a view-independent color."""
    return (np.asarray(rgb, dtype=np.float64) - COLOR_OFFSET) / C0
