"""Compiled slot loop shared by every policy.

All randomness is drawn outside (channel indices, fragment arrivals, one
uniform per slot for the base station, optional exploration uniforms), so
the loop itself is a deterministic function of its inputs.
"""

import numpy as np
from numba import njit

from .learner import greedy_rate, project, value_step
from .scheduler import MLWDF, PROPOSED, ROUNDROBIN, SOFTMAX, mlwdf_priorities, pick_max, pick_softmax

# accumulator columns, per window and user
F_POWER, F_POWER_EFF, F_QUEUE, F_DELAY, F_DEPART, F_SCHED, F_DROPS, F_ARRIVE, F_LAMBDA = range(9)
N_FIELDS = 9
# system accumulator columns
S_MAXBID, S_SCHEDBID, S_SLOTS = range(3)
# trace columns
TRACE_COLUMNS = ("state", "arrivals", "drops", "queue", "bid", "scheduled", "transmitted",
                 "power", "power_effective", "multiplier")


@njit(cache=True)
def run_block(t0, chan, arrivals, tie_u, expl_u,
              power, caps, rhat, delta, lam_cap, fast_a, fast_p, fast_off, slow_a, slow_p, slow_off, per_state, epsilon,
              policy, sharpness, mlwdf_targets, mlwdf_beta, burn_in, learn,
              V, visits, lam, post_q, post_x, fifo, fifo_head, avg_rate,
              acc, sysacc, trace, traj, record_every):
    T = chan.shape[0]
    N = chan.shape[1]
    qmax = V.shape[1] - 1
    Q = np.empty(N, np.int64)
    X = np.empty(N, np.int64)
    rates = np.empty(N, np.int64)
    drops = np.empty(N, np.int64)
    bids = np.empty(N)
    hol = np.zeros(N)
    ach = np.zeros(N)
    for k in range(T):
        t = t0 + k
        n = t + 1
        f_glob = fast_a * (n + fast_off) ** (-fast_p)
        e_n = slow_a * (n + slow_off) ** (-slow_p)
        w0 = 1 if t >= burn_in else 0

        for i in range(N):
            x = chan[k, i]
            a = arrivals[k, i]
            q = post_q[i] + a
            drop = 0
            if q > qmax:
                drop = q - qmax
                q = qmax
            base = fifo_head[i] + post_q[i]
            for j in range(a - drop):
                fifo[i, (base + j) % qmax] = t
            Q[i] = q
            X[i] = x
            drops[i] = drop
            if policy == MLWDF:
                r = min(rhat[i, x], q)
                hol[i] = (t - fifo[i, fifo_head[i]] + 1) if q > 0 else 0.0
                ach[i] = rhat[i, x]
            else:
                hi = min(caps[i, x], q)
                if epsilon > 0.0 and expl_u[k, i, 0] < epsilon:
                    r = min(int(expl_u[k, i, 1] * (hi + 1)), hi)
                else:
                    r = greedy_rate(V[i], q, x, caps[i, x], power[i, x])
            rates[i] = r
            bids[i] = r
            for w in range(2):
                if w == 0 and w0 == 0:
                    continue
                acc[w, i, F_DROPS] += drop
                acc[w, i, F_ARRIVE] += a - drop
                acc[w, i, F_QUEUE] += q

        if policy == PROPOSED:
            ks = pick_max(bids, tie_u[k])
        elif policy == SOFTMAX:
            ks = pick_softmax(bids, sharpness, tie_u[k])
        elif policy == ROUNDROBIN:
            ks = t % N
        else:
            ks = pick_max(mlwdf_priorities(hol, ach, mlwdf_targets, avg_rate), tie_u[k])

        maxbid = bids.max()
        for w in range(2):
            if w == 0 and w0 == 0:
                continue
            sysacc[w, S_MAXBID] += maxbid
            sysacc[w, S_SCHEDBID] += bids[ks]
            sysacc[w, S_SLOTS] += 1

        for i in range(N):
            q = Q[i]
            x = X[i]
            r = rates[i]
            sched = 1 if i == ks else 0
            u = r * sched
            dsum = 0.0
            for j in range(u):
                dsum += t - fifo[i, fifo_head[i]] + 1
                fifo_head[i] = (fifo_head[i] + 1) % qmax
            p_eff = power[i, x, r]
            p_act = p_eff * sched
            if learn:
                pq = post_q[i]
                px = post_x[i]
                if per_state:
                    visits[i, pq, px] += 1
                    f = fast_a * (visits[i, pq, px] + fast_off) ** (-fast_p)
                else:
                    f = f_glob
                value_step(V[i], pq, px, q, x, r, lam[i], delta[i], f, power[i, x], 0, 0)
                lam[i] = project(lam[i] + e_n * (q - delta[i]), lam_cap)
            if policy == MLWDF:
                avg_rate[i] = max((1.0 - mlwdf_beta) * avg_rate[i] + mlwdf_beta * u, 1e-9)
            post_q[i] = q - u
            post_x[i] = x
            for w in range(2):
                if w == 0 and w0 == 0:
                    continue
                acc[w, i, F_POWER] += p_act
                acc[w, i, F_POWER_EFF] += p_eff
                acc[w, i, F_DELAY] += dsum
                acc[w, i, F_DEPART] += u
                acc[w, i, F_SCHED] += sched
                acc[w, i, F_LAMBDA] += lam[i]
            if t < trace.shape[0]:
                trace[t, i, 0] = x
                trace[t, i, 1] = arrivals[k, i]
                trace[t, i, 2] = drops[i]
                trace[t, i, 3] = q
                trace[t, i, 4] = bids[i]
                trace[t, i, 5] = sched
                trace[t, i, 6] = u
                trace[t, i, 7] = p_act
                trace[t, i, 8] = p_eff
                trace[t, i, 9] = lam[i]
        if record_every > 0 and n % record_every == 0:
            row = n // record_every - 1
            if row < traj.shape[0]:
                for i in range(N):
                    traj[row, i, 0] = lam[i]
                    traj[row, i, 1] = V[i, 0, 0]
                    traj[row, i, 2] = Q[i]
    return 0
