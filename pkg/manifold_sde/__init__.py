# ManifoldSDE - 随机微分方程不变流形工具箱
__version__ = "1.0.0"
