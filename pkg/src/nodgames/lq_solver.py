"""Feedback Nash equilibria of finite-horizon linear-quadratic games.

Backward coupled-Riccati recursion for N players with affine dynamics
x+ = A x + sum_i B_i u_i + c and quadratic stage costs
(1/2) dx' Q_i dx + q_i' dx + (1/2) du_i' R_i du_i + r_i' du_i.

The solver runs on plain arrays or autodiff Nodes, so equilibrium policies
can be differentiated with respect to the cost quadraticization.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad


def _sym(m):
    return ad.mul(0.5, ad.add(m, ad.transpose(m)))


def lq_feedback_nash(a_seq, b_seq, q_seq, r_seq, q_terminal, regularization=1e-3):
    """Solve the coupled Riccati recursion for affine feedback policies.

    Arguments (T = horizon, N = players):
      a_seq:      [T] state Jacobians A_t (n, n)
      b_seq:      [T][N] control Jacobians B_it (n, m_i)
      q_seq:      [T][N] state quadraticizations (Q_it, q_it)
      r_seq:      [T][N] control quadraticizations (R_it, r_it)
      q_terminal: [N] terminal (Q_iT, q_iT)

    Returns (gains, offsets): per-step, per-player P_it (m_i, n) and
    a_it (m_i,) such that the equilibrium deviation policy is
    du_i = -P_i dx - a_i.

    If the stacked control system is singular at some step, an escalating
    ridge (starting at `regularization`) is added to its diagonal.
    """
    horizon = len(a_seq)
    num_players = len(q_terminal)
    m_dims = [np.shape(ad.value_of(b_seq[0][i]))[1] for i in range(num_players)]
    n = np.shape(ad.value_of(a_seq[0]))[0]
    m_total = sum(m_dims)
    m_off = np.cumsum([0] + m_dims)

    z_mats = [q_terminal[i][0] for i in range(num_players)]
    z_vecs = [q_terminal[i][1] for i in range(num_players)]

    gains = [None] * horizon
    offsets = [None] * horizon

    for t in range(horizon - 1, -1, -1):
        a_t = a_seq[t]
        b_t = b_seq[t]
        bt_z = [ad.matmul(ad.transpose(b_t[i]), z_mats[i]) for i in range(num_players)]

        s_rows = []
        rhs_rows = []
        for i in range(num_players):
            r_i, rv_i = r_seq[t][i]
            blocks = []
            for j in range(num_players):
                blk = ad.matmul(bt_z[i], b_t[j])
                if i == j:
                    blk = ad.add(blk, r_i)
                blocks.append(blk)
            s_rows.append(ad.concat(blocks, axis=1))
            # columns 0..n-1 determine the gain, the last column the offset
            lin = ad.add(ad.matmul(ad.transpose(b_t[i]), z_vecs[i]), rv_i)
            rhs_rows.append(ad.concat(
                [ad.matmul(bt_z[i], a_t), ad.reshape(lin, (m_dims[i], 1))], axis=1))
        s_mat = ad.concat(s_rows, axis=0)
        rhs = ad.concat(rhs_rows, axis=0)

        # escalate the ridge until the stacked system is well conditioned;
        # the check runs on detached values so taped solves stay exact
        s_val = np.asarray(ad.value_of(s_mat))
        ridge = 0.0
        while np.linalg.cond(s_val + ridge * np.eye(m_total)) > 1e12:
            ridge = regularization if ridge == 0.0 else 10.0 * ridge
            if ridge > 1e6:
                raise np.linalg.LinAlgError(
                    "stacked control system is irreparably singular")
        if ridge:
            s_mat = ad.add(s_mat, ridge * np.eye(m_total))
        sol = ad.solve(s_mat, rhs)

        p_all = sol[:, :n]
        a_all = sol[:, n]
        gains[t] = [p_all[m_off[i]:m_off[i + 1]] for i in range(num_players)]
        offsets[t] = [a_all[m_off[i]:m_off[i + 1]] for i in range(num_players)]

        # closed-loop transition under the stacked policies
        f_mat = a_t
        beta = np.zeros(n)
        for j in range(num_players):
            f_mat = ad.sub(f_mat, ad.matmul(b_t[j], gains[t][j]))
            beta = ad.sub(beta, ad.matmul(b_t[j], offsets[t][j]))

        new_z, new_zeta = [], []
        for i in range(num_players):
            q_i, qv_i = q_seq[t][i]
            r_i, rv_i = r_seq[t][i]
            p_i, o_i = gains[t][i], offsets[t][i]
            zi = ad.add(q_i, ad.matmul(ad.transpose(p_i), ad.matmul(r_i, p_i)))
            zi = ad.add(zi, ad.matmul(ad.transpose(f_mat), ad.matmul(z_mats[i], f_mat)))
            zeta = ad.add(qv_i, ad.matmul(ad.transpose(p_i), ad.matmul(r_i, o_i)))
            zeta = ad.sub(zeta, ad.matmul(ad.transpose(p_i), rv_i))
            zeta = ad.add(zeta, ad.matmul(
                ad.transpose(f_mat), ad.add(ad.matmul(z_mats[i], beta), z_vecs[i])))
            new_z.append(_sym(zi))
            new_zeta.append(zeta)
        z_mats, z_vecs = new_z, new_zeta

    return gains, offsets
