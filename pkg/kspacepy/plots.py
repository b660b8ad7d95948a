import numpy as np
import pandas as pd
import seaborn as sns
import matplotlib.pyplot as plt


def trajectories(traj, palette='flare', title=None):
    """
    One panel per frame with every shot drawn as a line through its samples.

    :traj: TrajectorySet
    :returns: the figure
    """
    sns.set_style('white')
    n = traj.n_frames
    cols = min(n, 4)
    rows = int(np.ceil(n / cols))
    fig, axes = plt.subplots(rows, cols, sharex=True, sharey=True,
        figsize=(4*cols, 4*rows), squeeze=False)
    df = traj.dataframe()
    for t, ax in enumerate(axes.ravel()):
        if t >= n:
            ax.axis('off')
            continue
        sns.lineplot(ax=ax, data=df[df['frame'] == t], x='ky', y='kx', hue='shot',
            sort=False, estimator=None, palette=palette, legend=False, marker='.', markersize=3)
        ax.set_title('frame %s' % t)
        ax.set_xlim(-0.5, 0.5)
        ax.set_ylim(-0.5, 0.5)
        ax.set_aspect('equal')
    fig.suptitle(title if title else 'Learned trajectories')
    return fig


def curves(log, title=None):
    """
    Training loss and validation PSNR per epoch from a log.csv frame,
    with freezing stage boundaries marked.
    """
    sns.set_style('white')
    fig, axes = plt.subplots(1, 2, figsize=(15, 5))

    g = sns.lineplot(ax=axes[0], data=log, x='epoch', y='train_loss')
    g.set_yscale('log')
    g.set_title('Training loss')

    h = sns.lineplot(ax=axes[1], data=log, x='epoch', y='val_psnr')
    h.set_ylabel('PSNR (dB)')
    h.set_title(title if title else 'Validation PSNR')

    # stage transitions
    changes = log['epoch'][log['stage'] != log['stage'].shift()].iloc[1:]
    for ax in axes:
        for epoch in changes:
            ax.axvline(epoch, color='grey', alpha=0.3, linestyle='dotted')
    return fig


def ablation(table, metric='psnr', palette='flare'):
    """ Bar chart of one metric across regimes with standard error bars """
    sns.set_style('white')
    fig, ax = plt.subplots(figsize=(10, 5))
    table = pd.DataFrame(table)
    sns.barplot(ax=ax, data=table, x='regime', y='%s_mean' % metric, palette=palette)
    ax.errorbar(np.arange(len(table)), table['%s_mean' % metric], yerr=table['%s_sem' % metric],
        fmt='none', color='black', capsize=4)
    ax.set_ylabel(metric.upper())
    ax.tick_params(axis='x', rotation=30)
    return fig


def save(fig, path):
    fig.savefig(path, bbox_inches='tight')
    plt.close(fig)
    return path
