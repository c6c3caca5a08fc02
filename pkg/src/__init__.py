# Mean field game fluctuation lab
