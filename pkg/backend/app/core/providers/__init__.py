# Providers module